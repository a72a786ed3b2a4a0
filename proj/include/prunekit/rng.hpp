#pragma once

#include <cmath>
#include <cstdint>

namespace prunekit {

// Counter-based generator: every draw is a pure function of (key, counter),
// so any consumer can be replayed exactly by rebuilding the key. Keys are
// derived from (seed, stream, substream); substream is typically an epoch
// index so retraining after a rewind sees the same shuffles and crops as the
// original pass over that epoch.

enum class Stream : uint64_t {
  WeightInit = 1,
  Shuffle = 2,
  Augment = 3,
  Data = 4,
  Calibration = 5,
};

inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class CounterRng {
 public:
  CounterRng(uint64_t seed, Stream stream, uint64_t substream = 0)
      : key_(derive_key(seed, static_cast<uint64_t>(stream), substream)) {}

  uint64_t next_u64() { return mix64(key_ ^ mix64(counter_++)); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // standard normal, Box-Muller without caching (one value per pair keeps the
  // draw count deterministic regardless of call pattern)
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // uniform integer in [0, n), rejection-sampled to avoid modulo bias
  uint64_t below(uint64_t n) {
    uint64_t threshold = (0ULL - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  bool coin() { return (next_u64() & 1ULL) != 0; }

 private:
  static uint64_t derive_key(uint64_t seed, uint64_t stream, uint64_t sub) {
    uint64_t k = mix64(seed ^ (stream * 0xd6e8feb86659fd93ULL));
    return mix64(k ^ (sub + 0xa0761d6478bd642fULL));
  }

  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace prunekit
