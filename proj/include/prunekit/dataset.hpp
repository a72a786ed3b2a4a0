#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "prunekit/errors.hpp"
#include "prunekit/rng.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

enum class DataSource { SyntheticBlobs, Cifar10BinaryDir };

struct DatasetSpec {
  DataSource source = DataSource::SyntheticBlobs;
  std::string dir;  // cifar10_binary_dir only
  int train_size = 512;
  int test_size = 256;
  int classes = 6;
  int channels = 3;
  int height = 10;
  int width = 10;
  bool augment_crop = true;
  bool augment_flip = true;
  int crop_pad = 2;
  double noise_sigma = 0.25;  // synthetic_blobs only

  void validate() const {
    if (train_size < 1 || test_size < 1)
      throw ConfigError("dataset: train_size and test_size must be >= 1");
    if (classes < 2) throw ConfigError("dataset: classes must be >= 2");
    if (channels < 1 || height < 1 || width < 1)
      throw ConfigError("dataset: image dims must be >= 1");
    if (crop_pad < 0) throw ConfigError("dataset: crop_pad must be >= 0");
    if (noise_sigma < 0.0) throw ConfigError("dataset: noise_sigma must be >= 0");
    if (source == DataSource::Cifar10BinaryDir) {
      if (dir.empty()) throw ConfigError("dataset: dir required for cifar10_binary_dir");
      if (classes != 10 || channels != 3 || height != 32 || width != 32)
        throw ConfigError("dataset: cifar10_binary_dir is 10 classes, 3x32x32");
    }
  }
};

struct Dataset {
  int count = 0, channels = 0, height = 0, width = 0;
  std::vector<float> images;  // count * channels * height * width, CHW per sample
  std::vector<int> labels;

  size_t sample_stride() const {
    return static_cast<size_t>(channels) * height * width;
  }
  const float* sample(int i) const { return &images[i * sample_stride()]; }
};

struct DataBundle {
  Dataset train, test;
  DatasetSpec spec;
};

namespace detail {

// Class prototypes are sums of two Gaussian bumps with per-class channel
// tints, fixed by (seed, class). Samples add white noise on top. Train and
// test draw from disjoint global sample indices, so the splits never overlap.
inline std::vector<float> blob_prototype(const DatasetSpec& spec, uint64_t seed,
                                         int cls) {
  CounterRng rng(seed, Stream::Data, 0x50000 + cls);
  const int H = spec.height, W = spec.width, C = spec.channels;
  std::vector<float> proto(static_cast<size_t>(C) * H * W, 0.0f);
  struct Bump {
    double cy, cx, s2;
  };
  Bump bumps[2];
  for (Bump& b : bumps) {
    b.cy = (0.2 + 0.6 * rng.uniform()) * H;
    b.cx = (0.2 + 0.6 * rng.uniform()) * W;
    const double sigma = (0.12 + 0.18 * rng.uniform()) * std::max(H, W);
    b.s2 = 2.0 * sigma * sigma;
  }
  std::vector<double> tint(C);
  for (double& t : tint) t = 0.3 + 0.7 * rng.uniform();
  for (int ch = 0; ch < C; ++ch)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double v = 0.0;
        for (const Bump& b : bumps) {
          const double dy = y - b.cy, dx = x - b.cx;
          v += std::exp(-(dy * dy + dx * dx) / b.s2);
        }
        proto[(static_cast<size_t>(ch) * H + y) * W + x] =
            static_cast<float>(tint[ch] * v);
      }
  return proto;
}

inline Dataset synth_split(const DatasetSpec& spec, uint64_t seed, int first_index,
                           int count) {
  Dataset d;
  d.count = count;
  d.channels = spec.channels;
  d.height = spec.height;
  d.width = spec.width;
  d.images.resize(static_cast<size_t>(count) * d.sample_stride());
  d.labels.resize(count);
  std::vector<std::vector<float>> protos(spec.classes);
  for (int c = 0; c < spec.classes; ++c) protos[c] = blob_prototype(spec, seed, c);
  for (int i = 0; i < count; ++i) {
    const int gi = first_index + i;
    const int cls = gi % spec.classes;
    d.labels[i] = cls;
    CounterRng rng(seed, Stream::Data, 0x100000 + static_cast<uint64_t>(gi));
    float* dst = &d.images[i * d.sample_stride()];
    const std::vector<float>& p = protos[cls];
    for (size_t j = 0; j < p.size(); ++j)
      dst[j] = p[j] + static_cast<float>(spec.noise_sigma * rng.normal());
  }
  return d;
}

inline void read_cifar_file(const std::string& path, Dataset& d, int& filled,
                            int want) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cifar10: cannot open " + path);
  const size_t record = 3073;
  std::vector<unsigned char> buf(record);
  while (filled < want) {
    f.read(reinterpret_cast<char*>(buf.data()), record);
    if (f.gcount() == 0) break;
    if (f.gcount() != static_cast<std::streamsize>(record))
      throw DataError("cifar10: short record in " + path);
    d.labels[filled] = buf[0];
    float* dst = &d.images[filled * d.sample_stride()];
    for (size_t j = 0; j < 3072; ++j)
      dst[j] = static_cast<float>(buf[1 + j]) / 255.0f;
    ++filled;
  }
}

inline Dataset cifar_split(const std::vector<std::string>& files, int want) {
  Dataset d;
  d.count = want;
  d.channels = 3;
  d.height = 32;
  d.width = 32;
  d.images.resize(static_cast<size_t>(want) * d.sample_stride());
  d.labels.resize(want);
  int filled = 0;
  for (const auto& f : files) {
    if (filled >= want) break;
    read_cifar_file(f, d, filled, want);
  }
  if (filled < want)
    throw DataError("cifar10: needed " + std::to_string(want) + " records, found " +
                    std::to_string(filled));
  return d;
}

}  // namespace detail

inline DataBundle load_dataset(const DatasetSpec& spec, uint64_t seed) {
  spec.validate();
  DataBundle b;
  b.spec = spec;
  if (spec.source == DataSource::SyntheticBlobs) {
    b.train = detail::synth_split(spec, seed, 0, spec.train_size);
    b.test = detail::synth_split(spec, seed, spec.train_size, spec.test_size);
  } else {
    std::vector<std::string> train_files;
    for (int i = 1; i <= 5; ++i)
      train_files.push_back(spec.dir + "/data_batch_" + std::to_string(i) + ".bin");
    b.train = detail::cifar_split(train_files, spec.train_size);
    b.test = detail::cifar_split({spec.dir + "/test_batch.bin"}, spec.test_size);
  }
  return b;
}

// Crop-with-pad then optional horizontal flip; draw order is fixed (crop dy,
// dx, then flip coin) so a keyed rng replays the same augmentation.
inline void augment_sample(float* dst, const float* src, int c, int h, int w,
                           CounterRng& rng, bool crop, int pad, bool flip) {
  const size_t plane = static_cast<size_t>(h) * w;
  if (crop && pad > 0) {
    const int dy = static_cast<int>(rng.below(2 * pad + 1)) - pad;
    const int dx = static_cast<int>(rng.below(2 * pad + 1)) - pad;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
          const int sy = y + dy, sx = x + dx;
          dst[ch * plane + y * w + x] =
              (sy >= 0 && sy < h && sx >= 0 && sx < w)
                  ? src[ch * plane + sy * w + sx]
                  : 0.0f;
        }
  } else {
    std::copy(src, src + static_cast<size_t>(c) * plane, dst);
  }
  if (flip && rng.coin()) {
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w / 2; ++x)
          std::swap(dst[ch * plane + y * w + x], dst[ch * plane + y * w + (w - 1 - x)]);
  }
}

// Deterministic Fisher-Yates permutation of 0..n-1.
inline std::vector<int> shuffled_indices(int n, uint64_t seed, uint64_t epoch) {
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  CounterRng rng(seed, Stream::Shuffle, epoch);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.below(static_cast<uint64_t>(i) + 1));
    std::swap(idx[i], idx[j]);
  }
  return idx;
}

}  // namespace prunekit
