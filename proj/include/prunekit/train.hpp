#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "prunekit/dataset.hpp"
#include "prunekit/model.hpp"
#include "prunekit/ops.hpp"
#include "prunekit/optimizer.hpp"
#include "prunekit/rng.hpp"

namespace prunekit {

// Momentum buffers for every parameter array of a model.
struct OptState {
  std::vector<Velocity> conv_w, conv_b, lin_w, lin_b;

  static OptState for_model(const ModelState& m) {
    OptState o;
    for (const ConvWeights& w : m.conv_w) {
      o.conv_w.emplace_back(w.filters.size(), 0.0f);
      o.conv_b.emplace_back(w.bias.size(), 0.0f);
    }
    for (const LinearWeights& w : m.linear_w) {
      o.lin_w.emplace_back(w.w.size(), 0.0f);
      o.lin_b.emplace_back(w.bias.size(), 0.0f);
    }
    return o;
  }

  void zero() {
    auto wipe = [](std::vector<Velocity>& vs) {
      for (Velocity& v : vs) std::fill(v.begin(), v.end(), 0.0f);
    };
    wipe(conv_w);
    wipe(conv_b);
    wipe(lin_w);
    wipe(lin_b);
  }
};

// Clears momentum of masked filters so a later unmasking (rollback restores
// an older mask) never inherits stale velocity.
inline void zero_masked_velocity(OptState& opt, const ModelState& m) {
  for (int ci = 0; ci < m.n_conv(); ++ci) {
    const size_t fs = m.conv_w[ci].filter_size();
    for (int f = 0; f < m.conv_w[ci].n_out; ++f)
      if (!m.masks[ci].bits[f]) {
        std::fill_n(opt.conv_w[ci].begin() + f * fs, fs, 0.0f);
        if (!opt.conv_b[ci].empty()) opt.conv_b[ci][f] = 0.0f;
      }
  }
}

inline void apply_sgd_to_model(ModelState& m, const ModelGrads& g, OptState& opt,
                               double lr, const SgdConfig& cfg) {
  for (int ci = 0; ci < m.n_conv(); ++ci) {
    sgd_step(m.conv_w[ci].filters, g.conv[ci].filters, opt.conv_w[ci], lr, cfg,
             &m.masks[ci].bits);
    if (m.conv_w[ci].has_bias)
      sgd_step(m.conv_w[ci].bias, g.conv[ci].bias, opt.conv_b[ci], lr, cfg,
               &m.masks[ci].bits);
  }
  for (size_t li = 0; li < m.linear_w.size(); ++li) {
    sgd_step(m.linear_w[li].w, g.linear[li].w, opt.lin_w[li], lr, cfg);
    sgd_step(m.linear_w[li].bias, g.linear[li].bias, opt.lin_b[li], lr, cfg);
  }
}

struct TrainOptions {
  int batch_size = 64;
  bool augment_crop = false;
  bool augment_flip = false;
  int crop_pad = 2;
};

// Trains epochs [epoch_from, epoch_to). Shuffle order and augmentation draws
// are keyed by (seed, epoch) alone, so retraining the same epoch range later
// replays identical batches regardless of what round the run is in.
inline std::vector<double> train_epochs(ModelState& m, OptState& opt,
                                        const Dataset& data, const SgdConfig& sgd,
                                        const TrainOptions& opts, uint64_t seed,
                                        int epoch_from, int epoch_to) {
  sgd.validate();
  if (opts.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (data.count < 1) throw DataError("train: empty dataset");
  const size_t stride = data.sample_stride();
  std::vector<double> epoch_loss;
  for (int e = epoch_from; e < epoch_to; ++e) {
    const double lr = lr_at_epoch(sgd, e);
    const std::vector<int> order =
        shuffled_indices(data.count, seed, static_cast<uint64_t>(e));
    CounterRng aug_rng(seed, Stream::Augment, static_cast<uint64_t>(e));
    double loss_sum = 0.0;
    int batches = 0;
    for (int start = 0; start < data.count; start += opts.batch_size) {
      const int bs = std::min(opts.batch_size, data.count - start);
      Tensor4D x(bs, data.channels, data.height, data.width);
      std::vector<int> y(bs);
      for (int b = 0; b < bs; ++b) {
        const int idx = order[start + b];
        y[b] = data.labels[idx];
        if (opts.augment_crop || opts.augment_flip)
          augment_sample(&x.data[b * stride], data.sample(idx), data.channels,
                         data.height, data.width, aug_rng, opts.augment_crop,
                         opts.crop_pad, opts.augment_flip);
        else
          std::copy(data.sample(idx), data.sample(idx) + stride,
                    &x.data[b * stride]);
      }
      ForwardArtifacts art = forward_model(m, x);
      LossResult loss = softmax_xent(art.logits, y);
      ModelGrads grads = backward_model(m, x, art, loss.grad_logits);
      apply_sgd_to_model(m, grads, opt, lr, sgd);
      loss_sum += loss.loss;
      ++batches;
    }
    epoch_loss.push_back(loss_sum / batches);
    m.epoch = e + 1;
  }
  return epoch_loss;
}

// Top-1 accuracy in percent; argmax ties resolve to the lowest class index.
inline double evaluate_top1(const ModelState& m, const Dataset& data,
                            int batch_size) {
  if (batch_size < 1) throw ConfigError("evaluate: batch_size must be >= 1");
  if (data.count < 1) throw DataError("evaluate: empty dataset");
  const size_t stride = data.sample_stride();
  int correct = 0;
  for (int start = 0; start < data.count; start += batch_size) {
    const int bs = std::min(batch_size, data.count - start);
    Tensor4D x(bs, data.channels, data.height, data.width);
    for (int b = 0; b < bs; ++b)
      std::copy(data.sample(start + b), data.sample(start + b) + stride,
                &x.data[b * stride]);
    const Matrix logits = masked_forward(m, x).logits;
    for (int b = 0; b < bs; ++b) {
      int best = 0;
      for (int c = 1; c < logits.cols; ++c)
        if (logits.at(b, c) > logits.at(b, best)) best = c;
      if (best == data.labels[start + b]) ++correct;
    }
  }
  return 100.0 * correct / data.count;
}

}  // namespace prunekit
