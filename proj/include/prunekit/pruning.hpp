#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "prunekit/attention.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/model.hpp"

namespace prunekit {

enum class PruneMetric { Params, Flops };

inline const char* prune_metric_name(PruneMetric m) {
  return m == PruneMetric::Params ? "params" : "flops";
}

inline PruneMetric prune_metric_from_name(const std::string& s) {
  if (s == "params") return PruneMetric::Params;
  if (s == "flops") return PruneMetric::Flops;
  throw ConfigError("pruning.metric must be params or flops (got \"" + s + "\")");
}

// Split a global threshold T across conv layers in proportion to each layer's
// share of the conv-only cost, so the per-layer thresholds sum back to T.
inline std::vector<double> layer_thresholds(double T, const Accounting& acc,
                                            PruneMetric metric) {
  const std::vector<long long>& per =
      metric == PruneMetric::Params ? acc.conv_params : acc.conv_flops;
  const long long total = metric == PruneMetric::Params ? acc.conv_params_total
                                                        : acc.conv_flops_total;
  if (total <= 0)
    throw AccountingError("layer_thresholds: conv " +
                          std::string(prune_metric_name(metric)) + " total is zero");
  std::vector<double> t(per.size());
  for (size_t i = 0; i < per.size(); ++i)
    t[i] = T * static_cast<double>(per[i]) / static_cast<double>(total);
  return t;
}

struct PruneOutcome {
  std::vector<double> thresholds;                 // per conv slot
  std::vector<std::vector<int>> pruned_filters;   // newly pruned this round
  std::vector<FilterMask> masks;                  // full masks after the round
  Accounting before, after;
  int pruned_count = 0;

  bool any_pruned() const { return pruned_count > 0; }
};

// Index of the guard filter: highest-scoring live filter, ties to the lowest
// index. It is never prunable, so every layer keeps at least one channel.
inline int guard_filter(const std::vector<double>& scores, const FilterMask& mask) {
  int best = -1;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!mask.bits[i]) continue;  // dead filters cannot be the guard
    if (best < 0 || scores[i] > scores[best]) best = static_cast<int>(i);
  }
  if (best < 0) throw PolicyError("guard_filter: layer has no live filters");
  return best;
}

// One pruning pass: mask every live filter whose score falls at or below its
// layer threshold, except the per-layer guard. Does not modify the model.
inline PruneOutcome prune_round(const ModelState& m, const AttentionSummary& summary,
                                double T, PruneMetric metric) {
  if (static_cast<int>(summary.scores.size()) != m.n_conv())
    throw PolicyError("prune_round: score layer count does not match model");
  PruneOutcome out;
  out.before = total_accounting(m);
  out.thresholds = layer_thresholds(T, out.before, metric);
  out.masks = m.masks;
  out.pruned_filters.resize(m.n_conv());
  for (int slot = 0; slot < m.n_conv(); ++slot) {
    const std::vector<double>& sc = summary.scores[slot];
    if (sc.size() != out.masks[slot].bits.size())
      throw PolicyError("prune_round: score count does not match layer width");
    const int keep = guard_filter(sc, m.masks[slot]);
    for (size_t f = 0; f < sc.size(); ++f) {
      if (!m.masks[slot].bits[f] || static_cast<int>(f) == keep) continue;
      if (sc[f] <= out.thresholds[slot]) {
        out.masks[slot].bits[f] = 0;
        out.pruned_filters[slot].push_back(static_cast<int>(f));
        ++out.pruned_count;
      }
    }
  }
  out.after = total_accounting(m, &out.masks);
  return out;
}

inline void apply_prune_outcome(ModelState& m, const PruneOutcome& out) {
  m.masks = out.masks;
  apply_masks_to_storage(m);
}

// One-shot threshold search: the achieved reduction is monotone in the global
// threshold, so bisect and return the outcome whose reduction lands closest to
// target_red_pct. Ties resolve to the smaller reduction.
inline PruneOutcome prune_to_reduction(const ModelState& m,
                                       const AttentionSummary& scores,
                                       double target_red_pct, PruneMetric metric) {
  if (!(target_red_pct >= 0.0 && target_red_pct <= 100.0))
    throw PolicyError("prune_to_reduction: target must be in [0, 100]");
  const Accounting base = total_accounting(m);
  auto red_of = [&](const PruneOutcome& o) {
    const double cur = static_cast<double>(
        metric == PruneMetric::Params ? o.after.total_params : o.after.total_flops);
    const double b = static_cast<double>(
        metric == PruneMetric::Params ? base.total_params : base.total_flops);
    return 100.0 * (1.0 - cur / b);
  };

  // Upper bound: a threshold whose per-layer shares clear every score.
  const auto& per = metric == PruneMetric::Params ? base.conv_params : base.conv_flops;
  const double total = static_cast<double>(
      metric == PruneMetric::Params ? base.conv_params_total : base.conv_flops_total);
  double hi = 1.0;
  for (size_t l = 0; l < scores.scores.size(); ++l) {
    double mx = 0.0;
    for (double s : scores.scores[l]) mx = std::max(mx, s);
    if (l < per.size() && per[l] > 0)
      hi = std::max(hi, mx * total / static_cast<double>(per[l]) * 2.0 + 1.0);
  }

  double lo = 0.0;
  PruneOutcome out_lo = prune_round(m, scores, lo, metric);
  PruneOutcome out_hi = prune_round(m, scores, hi, metric);
  if (red_of(out_lo) >= target_red_pct) return out_lo;
  if (red_of(out_hi) <= target_red_pct) return out_hi;
  for (int it = 0; it < 100; ++it) {
    const double mid = 0.5 * (lo + hi);
    PruneOutcome om = prune_round(m, scores, mid, metric);
    if (red_of(om) >= target_red_pct) {
      hi = mid;
      out_hi = std::move(om);
    } else {
      lo = mid;
      out_lo = std::move(om);
    }
  }
  const double below_gap = target_red_pct - red_of(out_lo);
  const double above_gap = red_of(out_hi) - target_red_pct;
  return above_gap < below_gap ? out_hi : out_lo;
}

// Filter-weight L1 norms in the same layout as attention scores; masked
// filters have zeroed storage and therefore score 0.
inline AttentionSummary weight_l1_scores(const ModelState& m) {
  AttentionSummary out;
  out.scores.resize(m.n_conv());
  for (size_t s = 0; s < m.specs.size(); ++s) {
    if (m.specs[s].kind != LayerKind::Conv) continue;
    const ConvWeights& w = m.conv_w[m.conv_slot(s)];
    std::vector<double>& sc = out.scores[m.conv_slot(s)];
    sc.assign(w.n_out, 0.0);
    const size_t fs = w.filter_size();
    for (int f = 0; f < w.n_out; ++f)
      for (size_t i = 0; i < fs; ++i)
        sc[f] += std::fabs(static_cast<double>(w.filters[f * fs + i]));
  }
  return out;
}

}  // namespace prunekit
