#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunekit/errors.hpp"
#include "prunekit/model.hpp"

namespace prunekit {

// Checkpoint container: "PKCKPT" magic, u32 version, u32 length-prefixed JSON
// architecture descriptor, raw little-endian f32 weight arrays in layer order
// (conv filters then bias, linear w then bias), one LSB-first packed mask
// bitset per conv layer, and a trailing CRC32 over everything before it.

namespace detail {

inline uint32_t crc32(const uint8_t* data, size_t len) {
  static uint32_t table[256];
  static bool ready = false;
  if (!ready) {
    for (uint32_t i = 0; i < 256; ++i) {
      uint32_t c = i;
      for (int j = 0; j < 8; ++j) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    ready = true;
  }
  uint32_t crc = 0xFFFFFFFFu;
  for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

inline void put_u32(std::string& buf, uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xFF));
  buf.push_back(static_cast<char>((v >> 8) & 0xFF));
  buf.push_back(static_cast<char>((v >> 16) & 0xFF));
  buf.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline uint32_t get_u32(const std::string& buf, size_t& off) {
  if (off + 4 > buf.size()) throw CheckpointError("checkpoint truncated (u32)");
  uint32_t v = static_cast<uint8_t>(buf[off]) |
               (static_cast<uint8_t>(buf[off + 1]) << 8) |
               (static_cast<uint8_t>(buf[off + 2]) << 16) |
               (static_cast<uint8_t>(buf[off + 3]) << 24);
  off += 4;
  return v;
}

inline void put_f32_array(std::string& buf, const std::vector<float>& v) {
  for (float f : v) put_u32(buf, std::bit_cast<uint32_t>(f));
}

inline void get_f32_array(const std::string& buf, size_t& off, std::vector<float>& v) {
  for (float& f : v) f = std::bit_cast<float>(get_u32(buf, off));
}

}  // namespace detail

inline constexpr uint32_t kCheckpointVersion = 1;

inline nlohmann::ordered_json spec_to_json(const LayerSpec& s, bool conv_bias) {
  nlohmann::ordered_json j;
  j["kind"] = layer_kind_name(s.kind);
  switch (s.kind) {
    case LayerKind::Conv:
      j["n_in"] = s.n_in;
      j["n_out"] = s.n_out;
      j["k"] = s.k;
      j["stride"] = s.stride;
      j["pad"] = s.pad;
      j["bias"] = conv_bias;
      break;
    case LayerKind::MaxPool:
    case LayerKind::AvgPool:
      j["window"] = s.window;
      j["stride"] = s.pstride;
      break;
    case LayerKind::Linear:
      j["in"] = s.in_features;
      j["out"] = s.out_features;
      break;
    default:
      break;
  }
  return j;
}

inline std::string serialize_checkpoint(const ModelState& m) {
  validate_model(m);
  nlohmann::ordered_json desc;
  desc["arch_id"] = m.arch_id;
  desc["input"] = {{"c", m.input_c}, {"h", m.input_h}, {"w", m.input_w}};
  desc["epoch"] = m.epoch;
  desc["round"] = m.round;
  desc["layers"] = nlohmann::ordered_json::array();
  int conv_i = 0;
  for (const auto& s : m.specs) {
    const bool cb = s.kind == LayerKind::Conv ? m.conv_w[conv_i].has_bias : false;
    if (s.kind == LayerKind::Conv) ++conv_i;
    desc["layers"].push_back(spec_to_json(s, cb));
  }
  desc["skips"] = nlohmann::ordered_json::array();
  for (const auto& sk : m.skips)
    desc["skips"].push_back({{"from", sk.from}, {"to", sk.to}});

  const std::string json_text = desc.dump();
  std::string buf;
  buf += "PKCKPT";
  detail::put_u32(buf, kCheckpointVersion);
  detail::put_u32(buf, static_cast<uint32_t>(json_text.size()));
  buf += json_text;
  for (const auto& w : m.conv_w) {
    detail::put_f32_array(buf, w.filters);
    if (w.has_bias) detail::put_f32_array(buf, w.bias);
  }
  for (const auto& lw : m.linear_w) {
    detail::put_f32_array(buf, lw.w);
    detail::put_f32_array(buf, lw.bias);
  }
  for (const auto& mask : m.masks) {
    const int nbytes = (mask.size() + 7) / 8;
    for (int b = 0; b < nbytes; ++b) {
      uint8_t byte = 0;
      for (int bit = 0; bit < 8; ++bit) {
        const int idx = b * 8 + bit;
        if (idx < mask.size() && mask.bits[idx]) byte |= (1u << bit);
      }
      buf.push_back(static_cast<char>(byte));
    }
  }
  detail::put_u32(buf, detail::crc32(reinterpret_cast<const uint8_t*>(buf.data()),
                                     buf.size()));
  return buf;
}

inline void save_checkpoint(const ModelState& m, const std::string& path) {
  const std::string buf = serialize_checkpoint(m);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open for write: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw CheckpointError("write failed: " + path);
}

inline ModelState deserialize_checkpoint(const std::string& buf) {
  if (buf.size() < 18) throw CheckpointError("checkpoint too small");
  if (buf.compare(0, 6, "PKCKPT") != 0)
    throw CheckpointError("bad magic, not a checkpoint");
  const uint32_t stored_crc = [&] {
    size_t off = buf.size() - 4;
    return detail::get_u32(buf, off);
  }();
  const uint32_t actual_crc = detail::crc32(
      reinterpret_cast<const uint8_t*>(buf.data()), buf.size() - 4);
  if (stored_crc != actual_crc)
    throw CheckpointError("CRC mismatch: file corrupt");
  size_t off = 6;
  const uint32_t version = detail::get_u32(buf, off);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const uint32_t json_len = detail::get_u32(buf, off);
  if (off + json_len > buf.size() - 4)
    throw CheckpointError("checkpoint truncated (descriptor)");
  nlohmann::json desc;
  try {
    desc = nlohmann::json::parse(buf.substr(off, json_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("descriptor parse error: ") + e.what());
  }
  off += json_len;

  ModelState m;
  try {
    m.arch_id = desc.at("arch_id").get<std::string>();
    m.input_c = desc.at("input").at("c").get<int>();
    m.input_h = desc.at("input").at("h").get<int>();
    m.input_w = desc.at("input").at("w").get<int>();
    m.epoch = desc.at("epoch").get<int>();
    m.round = desc.at("round").get<int>();
    for (const auto& jl : desc.at("layers")) {
      LayerSpec s;
      s.kind = layer_kind_from_name(jl.at("kind").get<std::string>());
      switch (s.kind) {
        case LayerKind::Conv:
          s.n_in = jl.at("n_in").get<int>();
          s.n_out = jl.at("n_out").get<int>();
          s.k = jl.at("k").get<int>();
          s.stride = jl.at("stride").get<int>();
          s.pad = jl.at("pad").get<int>();
          m.conv_w.emplace_back(s.n_out, s.n_in, s.k, jl.at("bias").get<bool>());
          m.masks.emplace_back(s.n_out);
          break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
          s.window = jl.at("window").get<int>();
          s.pstride = jl.at("stride").get<int>();
          break;
        case LayerKind::Linear:
          s.in_features = jl.at("in").get<int>();
          s.out_features = jl.at("out").get<int>();
          m.linear_w.emplace_back(s.in_features, s.out_features);
          break;
        default:
          break;
      }
      m.specs.push_back(s);
    }
    for (const auto& js : desc.at("skips"))
      m.skips.push_back({js.at("from").get<int>(), js.at("to").get<int>()});
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("descriptor field error: ") + e.what());
  }

  for (auto& w : m.conv_w) {
    detail::get_f32_array(buf, off, w.filters);
    if (w.has_bias) detail::get_f32_array(buf, off, w.bias);
  }
  for (auto& lw : m.linear_w) {
    detail::get_f32_array(buf, off, lw.w);
    detail::get_f32_array(buf, off, lw.bias);
  }
  for (auto& mask : m.masks) {
    const int nbytes = (mask.size() + 7) / 8;
    if (off + static_cast<size_t>(nbytes) > buf.size() - 4)
      throw CheckpointError("checkpoint truncated (masks)");
    for (int idx = 0; idx < mask.size(); ++idx) {
      const uint8_t byte = static_cast<uint8_t>(buf[off + idx / 8]);
      mask.bits[idx] = (byte >> (idx % 8)) & 1u;
    }
    off += nbytes;
  }
  if (off != buf.size() - 4)
    throw CheckpointError("checkpoint has trailing bytes");
  validate_model(m);
  return m;
}

inline ModelState load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open: " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(buf);
}

}  // namespace prunekit
