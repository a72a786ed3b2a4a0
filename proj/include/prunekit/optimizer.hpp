#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "prunekit/errors.hpp"

namespace prunekit {

struct SgdConfig {
  // (epoch, lr) breakpoints; the schedule is piecewise-constant, taking the lr
  // of the last breakpoint at or below the current epoch.
  std::vector<std::pair<int, double>> lr_schedule;
  double momentum = 0.9;
  double weight_decay = 0.0;
  bool nesterov = true;

  void validate() const {
    if (lr_schedule.empty()) throw ConfigError("sgd: lr_schedule must not be empty");
    int prev = -1;
    for (const auto& [ep, lr] : lr_schedule) {
      if (ep <= prev)
        throw ConfigError("sgd: lr_schedule epochs must be strictly increasing");
      if (!(lr > 0.0)) throw ConfigError("sgd: all lr values must be > 0");
      prev = ep;
    }
    if (momentum < 0.0) throw ConfigError("sgd: momentum must be >= 0");
    if (weight_decay < 0.0) throw ConfigError("sgd: weight_decay must be >= 0");
  }
};

inline double lr_at_epoch(const SgdConfig& cfg, int epoch) {
  cfg.validate();
  if (epoch < 0 || epoch < cfg.lr_schedule.front().first)
    throw ConfigError("lr_at_epoch: epoch " + std::to_string(epoch) +
                      " precedes first breakpoint " +
                      std::to_string(cfg.lr_schedule.front().first));
  double lr = cfg.lr_schedule.front().second;
  for (const auto& [ep, v] : cfg.lr_schedule) {
    if (ep > epoch) break;
    lr = v;
  }
  return lr;
}

// One velocity buffer per parameter array, same length.
using Velocity = std::vector<float>;

// d = g + wd*w; v = mu*v + d; step = d + mu*v (nesterov) or v; w -= lr*step.
// live_rows, when given, partitions the arrays into w.size()/live_rows.size()
// equal blocks (one per conv filter) and skips blocks whose flag is 0, so
// masked filters neither move nor accumulate velocity.
inline void sgd_step(std::vector<float>& w, const std::vector<float>& g, Velocity& v,
                     double lr, const SgdConfig& cfg,
                     const std::vector<uint8_t>* live_rows = nullptr) {
  if (g.size() != w.size())
    throw ShapeError("sgd_step: grad size != weight size");
  if (v.size() != w.size()) v.assign(w.size(), 0.0f);
  const double mu = cfg.momentum, wd = cfg.weight_decay;
  size_t block = w.size();
  size_t nblocks = 1;
  if (live_rows && !live_rows->empty()) {
    nblocks = live_rows->size();
    if (w.size() % nblocks != 0)
      throw ShapeError("sgd_step: weight size not divisible by mask length");
    block = w.size() / nblocks;
  }
  for (size_t bidx = 0; bidx < nblocks; ++bidx) {
    if (live_rows && !live_rows->empty() && !(*live_rows)[bidx]) continue;
    const size_t lo = bidx * block, hi = lo + block;
    for (size_t i = lo; i < hi; ++i) {
      const double d = static_cast<double>(g[i]) + wd * static_cast<double>(w[i]);
      const double vel = mu * static_cast<double>(v[i]) + d;
      v[i] = static_cast<float>(vel);
      const double step = cfg.nesterov ? d + mu * vel : vel;
      w[i] = static_cast<float>(static_cast<double>(w[i]) - lr * step);
    }
  }
}

}  // namespace prunekit
