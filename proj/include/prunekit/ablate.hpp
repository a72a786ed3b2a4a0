#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "prunekit/attention.hpp"
#include "prunekit/config.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/runner.hpp"
#include "prunekit/train.hpp"

namespace prunekit {

// Shared starting state for every ablation arm: one trained network with its
// epoch-k snapshot, so method comparisons differ only in the mask they pick.
struct BaselineBundle {
  DataBundle data;
  ModelState final_model;  // converged unpruned weights
  Snapshot snap;           // epoch-k weights and velocity
  int k = 0;
  double acc0 = 0.0;
  Accounting acct;
  TrainOptions opts;
};

inline BaselineBundle train_baseline(const RunConfig& cfg) {
  cfg.validate();
  BaselineBundle b;
  b.data = load_dataset(cfg.dataset, cfg.seed);
  ModelState m = build_arch(cfg.arch, cfg.dataset.channels, cfg.dataset.height,
                            cfg.dataset.width, cfg.dataset.classes);
  init_weights(m, cfg.seed);
  b.k = std::clamp(static_cast<int>(std::llround(cfg.rewind_fraction * cfg.total_epochs)),
                   0, cfg.total_epochs - 1);
  b.opts.batch_size = cfg.batch_size;
  b.opts.augment_crop = cfg.dataset.augment_crop;
  b.opts.augment_flip = cfg.dataset.augment_flip;
  b.opts.crop_pad = cfg.dataset.crop_pad;
  OptState opt = OptState::for_model(m);
  if (b.k > 0) train_epochs(m, opt, b.data.train, cfg.sgd, b.opts, cfg.seed, 0, b.k);
  b.snap = Snapshot{m, opt};
  train_epochs(m, opt, b.data.train, cfg.sgd, b.opts, cfg.seed, b.k, cfg.total_epochs);
  b.final_model = std::move(m);
  b.acct = total_accounting(b.final_model);
  b.acc0 = evaluate_top1(b.final_model, b.data.test, cfg.batch_size);
  return b;
}

// Applies masks to a copy of the converged baseline, rewinds per the config,
// retrains the tail, and reports test accuracy.
inline double retrain_with_masks(const RunConfig& cfg, const BaselineBundle& b,
                                 const std::vector<FilterMask>& masks,
                                 ModelState* out_model = nullptr) {
  ModelState m = b.final_model;
  m.masks = masks;
  apply_masks_to_storage(m);
  OptState opt = OptState::for_model(m);
  rewind_model(m, opt, &b.snap, b.k, cfg.rewind_weights);
  train_epochs(m, opt, b.data.train, cfg.sgd, b.opts, cfg.seed, b.k, cfg.total_epochs);
  const double acc = evaluate_top1(m, b.data.test, cfg.batch_size);
  if (out_model) *out_model = std::move(m);
  return acc;
}

struct AblationRow {
  std::string method;
  double acc = 0.0;
  double acc_loss = 0.0;
  double params_red_pct = 0.0;
  double flops_red_pct = 0.0;
};

namespace abdetail {

inline AblationRow score_and_retrain(const RunConfig& cfg, const BaselineBundle& b,
                                     const std::string& name,
                                     const AttentionSummary& scores,
                                     double target_red_pct) {
  const PruneOutcome out =
      prune_to_reduction(b.final_model, scores, target_red_pct, cfg.prune_metric);
  AblationRow row;
  row.method = name;
  row.acc = retrain_with_masks(cfg, b, out.masks);
  row.acc_loss = b.acc0 - row.acc;
  row.params_red_pct =
      100.0 * (1.0 - static_cast<double>(out.after.total_params) /
                         static_cast<double>(b.acct.total_params));
  row.flops_red_pct =
      100.0 * (1.0 - static_cast<double>(out.after.total_flops) /
                         static_cast<double>(b.acct.total_flops));
  return row;
}

}  // namespace abdetail

// One-shot pruning at a matched reduction level for each attention mapping
// plus the filter L1-norm baseline. Every arm shares the trained baseline and
// its rewinding snapshot; only the ranking differs.
inline std::vector<AblationRow> attention_function_sweep(const RunConfig& cfg,
                                                         double target_red_pct) {
  const BaselineBundle b = train_baseline(cfg);
  struct MethodSpec {
    const char* name;
    bool l1;
    AttentionFn fn;
    double p;
  };
  static const MethodSpec methods[] = {
      {"mean_p1", false, AttentionFn::Mean, 1.0},
      {"mean_p2", false, AttentionFn::Mean, 2.0},
      {"mean_p4", false, AttentionFn::Mean, 4.0},
      {"sum_p1", false, AttentionFn::Sum, 1.0},
      {"max_p1", false, AttentionFn::Max, 1.0},
      {"l1_norm", true, AttentionFn::Mean, 1.0},
  };
  std::vector<AblationRow> rows;
  for (const MethodSpec& ms : methods) {
    AttentionSummary scores;
    if (ms.l1) {
      scores = weight_l1_scores(b.final_model);
    } else {
      AttentionConfig ac = cfg.attention;
      ac.function = ms.fn;
      ac.p = ms.p;
      scores = collect_attention(b.final_model, b.data.train, ac, cfg.batch_size);
    }
    rows.push_back(abdetail::score_and_retrain(cfg, b, ms.name, scores, target_red_pct));
  }
  return rows;
}

// Single one-shot arm using the attention function the config asks for.
inline AblationRow oneshot_prune(const RunConfig& cfg, double target_red_pct) {
  const BaselineBundle b = train_baseline(cfg);
  const AttentionSummary scores =
      collect_attention(b.final_model, b.data.train, cfg.attention, cfg.batch_size);
  char name[48];
  std::snprintf(name, sizeof name, "%s_p%g", attention_fn_name(cfg.attention.function),
                cfg.attention.p);
  return abdetail::score_and_retrain(cfg, b, name, scores, target_red_pct);
}

struct FixedRateRow {
  int round = 0;
  double acc = 0.0;
  double acc_loss = 0.0;
  double params_red_pct = 0.0;
  double flops_red_pct = 0.0;
  int pruned = 0;
};

struct FixedRateResult {
  std::vector<FixedRateRow> rows;
  ModelState final_model;
  double acc0 = 0.0;
};

// Non-adaptive iterative pruning: each round removes ceil(rate% of live)
// lowest-scoring live filters per conv layer (guard filter exempt), then
// rewinds and retrains. by_attention=false ranks by filter L1 norm instead.
// Stops when nothing can be pruned, the round budget runs out, or the
// reduction reaches stop_red_pct.
inline FixedRateResult fixed_rate_prune(const RunConfig& cfg, double rate_pct,
                                        bool by_attention,
                                        double stop_red_pct = 100.0) {
  if (!(rate_pct > 0.0 && rate_pct <= 100.0))
    throw PolicyError("fixed-rate pruning: rate must be in (0, 100]");
  const BaselineBundle b = train_baseline(cfg);
  FixedRateResult res;
  res.acc0 = b.acc0;
  ModelState m = b.final_model;
  OptState opt = OptState::for_model(m);
  for (int r = 1; r <= cfg.max_rounds; ++r) {
    const AttentionSummary scores =
        by_attention ? collect_attention(m, b.data.train, cfg.attention, cfg.batch_size)
                     : weight_l1_scores(m);
    int pruned = 0;
    for (int l = 0; l < m.n_conv(); ++l) {
      FilterMask& mask = m.masks[l];
      const std::vector<double>& sc = scores.scores[l];
      const int keep = guard_filter(sc, mask);
      std::vector<int> prunable;
      for (int f = 0; f < mask.size(); ++f)
        if (mask.bits[f] && f != keep) prunable.push_back(f);
      int n = static_cast<int>(std::ceil(rate_pct / 100.0 * mask.live()));
      n = std::min(n, static_cast<int>(prunable.size()));
      std::stable_sort(prunable.begin(), prunable.end(),
                       [&](int a, int c) { return sc[a] < sc[c]; });
      for (int i = 0; i < n; ++i) {
        mask.bits[prunable[i]] = 0;
        ++pruned;
      }
    }
    if (pruned == 0) break;
    apply_masks_to_storage(m);
    rewind_model(m, opt, &b.snap, b.k, cfg.rewind_weights);
    train_epochs(m, opt, b.data.train, cfg.sgd, b.opts, cfg.seed, b.k, cfg.total_epochs);
    m.round = r;

    FixedRateRow row;
    row.round = r;
    row.acc = evaluate_top1(m, b.data.test, cfg.batch_size);
    row.acc_loss = b.acc0 - row.acc;
    const Accounting a = total_accounting(m);
    row.params_red_pct =
        100.0 * (1.0 - static_cast<double>(a.total_params) /
                           static_cast<double>(b.acct.total_params));
    row.flops_red_pct =
        100.0 * (1.0 - static_cast<double>(a.total_flops) /
                           static_cast<double>(b.acct.total_flops));
    row.pruned = pruned;
    res.rows.push_back(row);
    if (row.params_red_pct >= stop_red_pct) break;
  }
  res.final_model = std::move(m);
  return res;
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "method,acc,acc_loss,params_red_pct,flops_red_pct\n";
  char buf[192];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g\n", r.method.c_str(),
                  r.acc, r.acc_loss, r.params_red_pct, r.flops_red_pct);
    os << buf;
  }
}

inline void write_fixed_rate_csv(std::ostream& os, const std::vector<FixedRateRow>& rows) {
  os << "round,acc,acc_loss,params_red_pct,flops_red_pct,pruned\n";
  char buf[192];
  for (const FixedRateRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%d\n", r.round, r.acc,
                  r.acc_loss, r.params_red_pct, r.flops_red_pct, r.pruned);
    os << buf;
  }
}

}  // namespace prunekit
