#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "prunekit/dataset.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/model.hpp"
#include "prunekit/rng.hpp"

namespace prunekit {

enum class AttentionFn { Mean, Max, Sum };

inline const char* attention_fn_name(AttentionFn f) {
  switch (f) {
    case AttentionFn::Mean: return "mean";
    case AttentionFn::Max: return "max";
    case AttentionFn::Sum: return "sum";
  }
  throw ConfigError("unknown attention function");
}

inline AttentionFn attention_fn_from_name(const std::string& s) {
  if (s == "mean") return AttentionFn::Mean;
  if (s == "max") return AttentionFn::Max;
  if (s == "sum") return AttentionFn::Sum;
  throw ConfigError("attention.function must be one of mean, max, sum (got \"" + s +
                    "\")");
}

struct AttentionConfig {
  AttentionFn function = AttentionFn::Mean;
  double p = 1.0;
  int calibration_batches = 10;
  uint64_t calibration_seed = 1;

  void validate() const {
    if (p < 1.0) throw ConfigError("attention.p must be >= 1");
    if (calibration_batches < 1)
      throw ConfigError("attention.calibration_batches must be >= 1");
  }
};

// Reduce one h*w activation map to a scalar. Magnitudes are raised to p first,
// so for max the result is (max|a|)^p.
inline double attention_of_map(const float* map, int h, int w, AttentionFn fn,
                               double p) {
  const size_t n = static_cast<size_t>(h) * w;
  auto lift = [p](float a) -> double {
    const double m = std::fabs(static_cast<double>(a));
    if (p == 1.0) return m;
    if (p == 2.0) return m * m;
    return std::pow(m, p);
  };
  if (fn == AttentionFn::Max) {
    double best = 0.0;
    for (size_t i = 0; i < n; ++i) best = std::max(best, lift(map[i]));
    return best;
  }
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) sum += lift(map[i]);
  if (fn == AttentionFn::Mean) return sum / static_cast<double>(n);
  return sum;
}

struct AttentionSummary {
  // scores[conv_slot][filter], averaged over the calibration samples
  std::vector<std::vector<double>> scores;
  int sample_count = 0;
};

// Score every conv filter on a fixed calibration subset of `data`. The subset
// is a Fisher-Yates prefix keyed only by calibration_seed, so it is identical
// across rounds and retraining stages.
inline AttentionSummary collect_attention(const ModelState& m, const Dataset& data,
                                          const AttentionConfig& cfg,
                                          int batch_size) {
  cfg.validate();
  if (batch_size < 1) throw ConfigError("attention: batch_size must be >= 1");
  if (data.count < 1) throw DataError("attention: empty calibration dataset");

  const int want = static_cast<int>(
      std::min(static_cast<long long>(data.count),
               static_cast<long long>(cfg.calibration_batches) * batch_size));
  std::vector<int> pool(data.count);
  for (int i = 0; i < data.count; ++i) pool[i] = i;
  CounterRng rng(cfg.calibration_seed, Stream::Calibration, 0);
  for (int i = 0; i < want; ++i) {
    const int j =
        i + static_cast<int>(rng.below(static_cast<uint64_t>(data.count - i)));
    std::swap(pool[i], pool[j]);
  }

  AttentionSummary out;
  out.sample_count = want;
  out.scores.resize(m.n_conv());
  for (size_t s = 0; s < m.specs.size(); ++s)
    if (m.specs[s].kind == LayerKind::Conv)
      out.scores[m.conv_slot(s)].assign(m.specs[s].n_out, 0.0);

  const size_t stride = data.sample_stride();
  for (int start = 0; start < want; start += batch_size) {
    const int bs = std::min(batch_size, want - start);
    Tensor4D x(bs, data.channels, data.height, data.width);
    for (int b = 0; b < bs; ++b)
      std::copy(data.sample(pool[start + b]), data.sample(pool[start + b]) + stride,
                &x.data[b * stride]);
    MaskedForwardResult r = masked_forward(m, x, /*capture=*/true);
    for (size_t slot = 0; slot < r.activations.size(); ++slot) {
      const Tensor4D& act = r.activations[slot];
      const size_t plane = static_cast<size_t>(act.h) * act.w;
      for (int b = 0; b < act.n; ++b)
        for (int c = 0; c < act.c; ++c)
          out.scores[slot][c] += attention_of_map(
              &act.data[(static_cast<size_t>(b) * act.c + c) * plane], act.h, act.w,
              cfg.function, cfg.p);
    }
  }
  for (auto& layer : out.scores)
    for (double& s : layer) s /= static_cast<double>(want);
  return out;
}

inline void write_attention_csv(const std::string& path,
                                const AttentionSummary& summary) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << "layer_index,filter_index,score\n";
  char buf[64];
  for (size_t l = 0; l < summary.scores.size(); ++l)
    for (size_t i = 0; i < summary.scores[l].size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.10g", summary.scores[l][i]);
      f << l << ',' << i << ',' << buf << '\n';
    }
}

}  // namespace prunekit
