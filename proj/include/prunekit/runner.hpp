#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prunekit/attention.hpp"
#include "prunekit/checkpoint.hpp"
#include "prunekit/config.hpp"
#include "prunekit/controller.hpp"
#include "prunekit/dataset.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/model.hpp"
#include "prunekit/pruning.hpp"
#include "prunekit/train.hpp"

namespace prunekit {

// Weights and optimizer velocity captured at the rewinding epoch. Held in
// memory for the duration of a run; the model half is also saved to disk.
struct Snapshot {
  ModelState model;
  OptState opt;
};

// L2 distance between the live-filter conv weights of two same-shape models.
// Masked filters are zero on both sides of the subtraction and contribute
// nothing; bias is not part of the metric.
inline double stability_to_pruning(const ModelState& pruned,
                                   const ModelState& original,
                                   const std::vector<FilterMask>& masks) {
  if (pruned.conv_w.size() != original.conv_w.size() ||
      masks.size() != pruned.conv_w.size())
    throw ShapeError("stability: conv layer counts differ");
  double sum = 0.0;
  for (size_t ci = 0; ci < pruned.conv_w.size(); ++ci) {
    const ConvWeights& a = pruned.conv_w[ci];
    const ConvWeights& b = original.conv_w[ci];
    if (a.n_out != b.n_out || a.filters.size() != b.filters.size())
      throw ShapeError("stability: conv " + std::to_string(ci) + " shapes differ");
    if (masks[ci].size() != a.n_out)
      throw ShapeError("stability: mask size mismatch at conv " + std::to_string(ci));
    const size_t fs = a.filter_size();
    for (int f = 0; f < a.n_out; ++f) {
      if (!masks[ci].bits[f]) continue;
      for (size_t j = static_cast<size_t>(f) * fs; j < static_cast<size_t>(f + 1) * fs; ++j) {
        const double d = static_cast<double>(a.filters[j]) - static_cast<double>(b.filters[j]);
        sum += d * d;
      }
    }
  }
  return std::sqrt(sum);
}

// Repositions training at epoch k. Learning-rate rewinding keeps the weights
// and restarts momentum along with the schedule; weight rewinding also
// restores the snapshot weights and velocity, with the current masks applied
// on top so pruned filters stay zero.
inline void rewind_model(ModelState& m, OptState& opt, const Snapshot* snap, int k,
                         bool rewind_weights) {
  if (rewind_weights) {
    if (!snap) throw CheckpointError("rewind: weight snapshot missing");
    m.conv_w = snap->model.conv_w;
    m.linear_w = snap->model.linear_w;
    opt = snap->opt;
    apply_masks_to_storage(m);
    zero_masked_velocity(opt, m);
  } else {
    opt.zero();
  }
  m.epoch = k;
}

struct RoundRecord {
  int round = 0;
  double T = 0.0;
  double lambda = 0.0;
  std::string action;  // decision taken after this round; "baseline" for round 0
  bool acceptable = false;
  double acc = 0.0;
  double acc_loss = 0.0;
  long long params_remaining = 0;
  double params_red_pct = 0.0;
  long long flops_remaining = 0;
  double flops_red_pct = 0.0;
  int pruned_this_round = 0;
  std::vector<double> thresholds;
  std::vector<std::vector<int>> pruned_filters;
  double stability = 0.0;
  double wall_s = 0.0;
  int rollback_to = -1;  // target round when action == "rollback"
  std::string checkpoint;  // relative to the run dir, empty once deleted
};

struct RunResult {
  std::string status;  // converged | budget_exhausted | failed
  std::string run_dir;
  std::vector<RoundRecord> rounds;
  double baseline_acc = 0.0;
  Accounting baseline;
  ModelState final_model;
  int final_round = 0;
  double final_acc = 0.0;
  double final_stability = 0.0;
  int last_acceptable_round = -1;
  int first_unacceptable_round = -1;
};

namespace rundetail {

inline double secs_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline RoundMetrics metrics_from(const Accounting& cur, const Accounting& base,
                                 double acc, double acc0) {
  RoundMetrics m;
  m.acc = acc;
  m.acc_loss = acc0 - acc;
  m.current_params = cur.total_params;
  m.current_flops = cur.total_flops;
  m.params_reduction =
      100.0 * (1.0 - static_cast<double>(cur.total_params) /
                         static_cast<double>(base.total_params));
  m.flops_reduction =
      100.0 * (1.0 - static_cast<double>(cur.total_flops) /
                         static_cast<double>(base.total_flops));
  return m;
}

}  // namespace rundetail

inline std::string resolve_out_root(const RunConfig& cfg) {
  const char* env = std::getenv("PRUNEKIT_OUT");
  if (env && *env) return env;
  return cfg.out_dir.empty() ? std::string("runs") : cfg.out_dir;
}

// Fresh timestamped directory under root; never reuses an existing one.
inline std::string make_run_dir(const std::string& root, uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  for (int n = 0;; ++n) {
    std::string name = std::string("run_") + stamp + "_s" + std::to_string(seed);
    if (n) name += "_" + std::to_string(n);
    const fs::path p = fs::path(root) / name;
    if (!fs::exists(p)) {
      fs::create_directories(p);
      return p.string();
    }
  }
}

inline std::string format_trace_row(const RoundRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%s\n",
                r.round, r.T, r.lambda, r.acc, r.acc_loss, r.params_red_pct,
                r.flops_red_pct, r.action.c_str());
  return buf;
}

inline nlohmann::ordered_json round_to_json(const RoundRecord& r) {
  nlohmann::ordered_json j;
  j["round"] = r.round;
  j["T"] = r.T;
  j["lambda"] = r.lambda;
  j["action"] = r.action;
  j["acceptable"] = r.acceptable;
  j["acc"] = r.acc;
  j["acc_loss"] = r.acc_loss;
  j["params_remaining"] = r.params_remaining;
  j["params_red_pct"] = r.params_red_pct;
  j["flops_remaining"] = r.flops_remaining;
  j["flops_red_pct"] = r.flops_red_pct;
  j["pruned_this_round"] = r.pruned_this_round;
  j["thresholds"] = r.thresholds;
  j["pruned_filters"] = r.pruned_filters;
  j["stability"] = r.stability;
  j["wall_s"] = r.wall_s;
  j["rollback_to"] = r.rollback_to;
  j["checkpoint"] = r.checkpoint;
  return j;
}

inline RoundRecord round_from_json(const nlohmann::json& j) {
  RoundRecord r;
  try {
    r.round = j.at("round").get<int>();
    r.T = j.at("T").get<double>();
    r.lambda = j.at("lambda").get<double>();
    r.action = j.at("action").get<std::string>();
    r.acceptable = j.at("acceptable").get<bool>();
    r.acc = j.at("acc").get<double>();
    r.acc_loss = j.at("acc_loss").get<double>();
    r.params_remaining = j.at("params_remaining").get<long long>();
    r.params_red_pct = j.at("params_red_pct").get<double>();
    r.flops_remaining = j.at("flops_remaining").get<long long>();
    r.flops_red_pct = j.at("flops_red_pct").get<double>();
    r.pruned_this_round = j.at("pruned_this_round").get<int>();
    r.thresholds = j.at("thresholds").get<std::vector<double>>();
    r.pruned_filters = j.at("pruned_filters").get<std::vector<std::vector<int>>>();
    r.stability = j.at("stability").get<double>();
    r.wall_s = j.at("wall_s").get<double>();
    r.rollback_to = j.at("rollback_to").get<int>();
    r.checkpoint = j.at("checkpoint").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("round record field error: ") + e.what());
  }
  return r;
}

// Full adaptive pruning run. When run_dir is empty a fresh timestamped
// directory is created under the resolved output root; an explicit run_dir
// must not already exist.
inline RunResult run_experiment(const RunConfig& cfg, std::string run_dir = std::string()) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (run_dir.empty()) {
    run_dir = make_run_dir(resolve_out_root(cfg), cfg.seed);
  } else {
    if (fs::exists(run_dir)) throw DataError("run dir already exists: " + run_dir);
    fs::create_directories(run_dir);
  }
  fs::create_directories(fs::path(run_dir) / "rounds");
  fs::create_directories(fs::path(run_dir) / "checkpoints");
  {
    std::ofstream f(fs::path(run_dir) / "config.json", std::ios::binary);
    if (!f) throw DataError("cannot write config echo in " + run_dir);
    f << config_to_json(cfg).dump(2) << "\n";
  }

  const auto t_run = std::chrono::steady_clock::now();
  const DataBundle data = load_dataset(cfg.dataset, cfg.seed);

  ModelState m = build_arch(cfg.arch, cfg.dataset.channels, cfg.dataset.height,
                            cfg.dataset.width, cfg.dataset.classes);
  init_weights(m, cfg.seed);

  int k = static_cast<int>(std::llround(cfg.rewind_fraction * cfg.total_epochs));
  k = std::clamp(k, 0, cfg.total_epochs - 1);  // keep at least one retrain epoch

  TrainOptions opts;
  opts.batch_size = cfg.batch_size;
  opts.augment_crop = cfg.dataset.augment_crop;
  opts.augment_flip = cfg.dataset.augment_flip;
  opts.crop_pad = cfg.dataset.crop_pad;

  OptState opt = OptState::for_model(m);
  if (k > 0) train_epochs(m, opt, data.train, cfg.sgd, opts, cfg.seed, 0, k);
  const Snapshot snap{m, opt};
  save_checkpoint(snap.model,
                  (fs::path(run_dir) / "checkpoints" / "snapshot_epoch_k.pkckpt").string());
  train_epochs(m, opt, data.train, cfg.sgd, opts, cfg.seed, k, cfg.total_epochs);

  const ModelState baseline_final = m;
  const Accounting base_acct = total_accounting(m);
  const double acc0 = evaluate_top1(m, data.test, cfg.batch_size);

  Controller ctrl(cfg.policy, cfg.controller);

  RunResult res;
  res.run_dir = run_dir;
  res.baseline_acc = acc0;
  res.baseline = base_acct;

  auto ckpt_rel = [](int r) {
    char b[48];
    std::snprintf(b, sizeof b, "checkpoints/round_%04d.pkckpt", r);
    return std::string(b);
  };
  auto write_round_json = [&](const RoundRecord& rec) {
    char b[32];
    std::snprintf(b, sizeof b, "round_%04d.json", rec.round);
    std::ofstream f(fs::path(run_dir) / "rounds" / b, std::ios::binary);
    if (!f) throw DataError("cannot write round record in " + run_dir);
    f << round_to_json(rec).dump(2) << "\n";
  };

  int current_round = 0;

  // Round 0 is the converged unpruned baseline: recorded as the rollback
  // anchor but never evaluated, so the first pruning round still runs at the
  // initial threshold.
  {
    const auto t0 = std::chrono::steady_clock::now();
    RoundRecord rec;
    rec.round = 0;
    rec.T = ctrl.T();
    rec.lambda = ctrl.lambda();
    rec.action = "baseline";
    rec.acc = acc0;
    rec.params_remaining = base_acct.total_params;
    rec.flops_remaining = base_acct.total_flops;
    rec.checkpoint = ckpt_rel(0);
    save_checkpoint(m, run_dir + "/" + rec.checkpoint);
    const RoundMetrics mm = rundetail::metrics_from(base_acct, base_acct, acc0, acc0);
    const LedgerEntry& e = ctrl.record_round(mm, rec.checkpoint);
    rec.acceptable = e.acceptable;
    if (e.acceptable) res.last_acceptable_round = 0;
    rec.wall_s = rundetail::secs_since(t0);
    res.rounds.push_back(rec);
    write_round_json(rec);
  }

  std::string status;
  for (int r = 1; r <= cfg.max_rounds && status.empty(); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundRecord rec;
    rec.round = r;
    rec.T = ctrl.T();
    rec.lambda = ctrl.lambda();

    // Attention comes from the converged weights of the previous round,
    // immediately before pruning.
    const AttentionSummary scores =
        collect_attention(m, data.train, cfg.attention, cfg.batch_size);
    {
      char b[32];
      std::snprintf(b, sizeof b, "attn_round_%04d.csv", r);
      write_attention_csv((fs::path(run_dir) / b).string(), scores);
    }
    const PruneOutcome out = prune_round(m, scores, ctrl.T(), cfg.prune_metric);
    apply_prune_outcome(m, out);
    rec.pruned_this_round = out.pruned_count;
    rec.thresholds = out.thresholds;
    rec.pruned_filters = out.pruned_filters;

    rewind_model(m, opt, &snap, k, cfg.rewind_weights);
    train_epochs(m, opt, data.train, cfg.sgd, opts, cfg.seed, k, cfg.total_epochs);
    m.round = r;

    rec.acc = evaluate_top1(m, data.test, cfg.batch_size);
    const Accounting acct = total_accounting(m);
    const RoundMetrics mm = rundetail::metrics_from(acct, base_acct, rec.acc, acc0);
    rec.acc_loss = mm.acc_loss;
    rec.params_remaining = acct.total_params;
    rec.params_red_pct = mm.params_reduction;
    rec.flops_remaining = acct.total_flops;
    rec.flops_red_pct = mm.flops_reduction;
    rec.stability = stability_to_pruning(m, baseline_final, m.masks);

    rec.checkpoint = ckpt_rel(r);
    save_checkpoint(m, run_dir + "/" + rec.checkpoint);

    const LedgerEntry& e = ctrl.record_round(mm, rec.checkpoint);
    rec.acceptable = e.acceptable;
    const Decision d = ctrl.evaluate_round();
    rec.action = action_name(d.action);

    if (e.acceptable) {
      res.last_acceptable_round = r;
    } else if (res.first_unacceptable_round < 0) {
      res.first_unacceptable_round = r;  // keep its checkpoint for the report
    } else {
      fs::remove(run_dir + "/" + rec.checkpoint);
      rec.checkpoint.clear();
    }

    switch (d.action) {
      case Action::Continue:
        current_round = r;
        break;
      case Action::Rollback: {
        const LedgerEntry& target = ctrl.ledger()[d.to_round];
        m = load_checkpoint(run_dir + "/" + target.checkpoint);
        opt = OptState::for_model(m);
        current_round = d.to_round;
        rec.rollback_to = d.to_round;
        break;
      }
      case Action::Terminate:
        current_round = r;
        status = "converged";
        break;
      case Action::Fail:
        status = "failed";
        break;
    }

    rec.wall_s = rundetail::secs_since(t0);
    res.rounds.push_back(rec);
    write_round_json(rec);
  }
  if (status.empty()) status = "budget_exhausted";
  res.status = status;

  if (status == "failed") {
    // No acceptable round remains anywhere; surface the unpruned baseline.
    res.final_model = baseline_final;
    res.final_round = 0;
  } else {
    res.final_model = m;
    res.final_round = current_round;
  }
  res.final_acc = ctrl.ledger()[res.final_round].metrics.acc;
  res.final_stability =
      stability_to_pruning(res.final_model, baseline_final, res.final_model.masks);

  {
    std::ofstream f(fs::path(run_dir) / "trace.csv", std::ios::binary);
    if (!f) throw DataError("cannot write trace in " + run_dir);
    f << "round,T,lambda,acc,acc_loss,params_red_pct,flops_red_pct,action\n";
    for (const RoundRecord& rr : res.rounds) f << format_trace_row(rr);
  }

  const Accounting fin = total_accounting(res.final_model);
  nlohmann::ordered_json rep;
  rep["status"] = res.status;
  rep["rounds_run"] = static_cast<int>(res.rounds.size()) - 1;
  rep["baseline"] = {{"acc", acc0},
                     {"params", base_acct.total_params},
                     {"flops", base_acct.total_flops}};
  nlohmann::ordered_json fj;
  fj["round"] = res.final_round;
  fj["acc"] = res.final_acc;
  fj["acc_loss"] = acc0 - res.final_acc;
  fj["params"] = fin.total_params;
  fj["params_red_pct"] =
      100.0 * (1.0 - static_cast<double>(fin.total_params) /
                         static_cast<double>(base_acct.total_params));
  fj["flops"] = fin.total_flops;
  fj["flops_red_pct"] =
      100.0 * (1.0 - static_cast<double>(fin.total_flops) /
                         static_cast<double>(base_acct.total_flops));
  fj["checkpoint"] = ctrl.ledger()[res.final_round].checkpoint;
  fj["stability"] = res.final_stability;
  rep["final"] = fj;
  rep["T_final"] = ctrl.T();
  rep["lambda_final"] = ctrl.lambda();
  if (res.last_acceptable_round >= 0) {
    rep["last_below_target"] = {
        {"round", res.last_acceptable_round},
        {"checkpoint", ctrl.ledger()[res.last_acceptable_round].checkpoint}};
  } else {
    rep["last_below_target"] = nullptr;
  }
  if (res.first_unacceptable_round >= 0) {
    rep["first_above_target"] = {
        {"round", res.first_unacceptable_round},
        {"checkpoint", res.rounds[res.first_unacceptable_round].checkpoint}};
  } else {
    rep["first_above_target"] = nullptr;
  }
  rep["wall_s"] = rundetail::secs_since(t_run);
  {
    std::ofstream f(fs::path(run_dir) / "final_report.json", std::ios::binary);
    if (!f) throw DataError("cannot write final report in " + run_dir);
    f << rep.dump(2) << "\n";
  }
  return res;
}

struct SweepPoint {
  int k = 0;
  double acc = 0.0;
  double stability = 0.0;
  double params_red_pct = 0.0;
};

// Rewinding-epoch study: one training pass snapshots every requested epoch, a
// single one-shot mask at target_red_pct is shared across arms, and each arm
// resumes from its snapshot (weights and velocity) with the mask applied,
// retraining to the full budget.
inline std::vector<SweepPoint> rewind_sweep(const RunConfig& cfg,
                                            const std::vector<double>& fractions,
                                            double target_red_pct) {
  cfg.validate();
  if (fractions.empty()) throw ConfigError("rewind_sweep: no fractions given");
  std::vector<int> ks;
  for (double f : fractions) {
    if (!(f > 0.0 && f < 1.0))
      throw ConfigError("rewind_sweep: fractions must be in (0, 1)");
    ks.push_back(std::clamp<int>(
        static_cast<int>(std::llround(f * cfg.total_epochs)), 0, cfg.total_epochs - 1));
  }

  const DataBundle data = load_dataset(cfg.dataset, cfg.seed);
  ModelState m = build_arch(cfg.arch, cfg.dataset.channels, cfg.dataset.height,
                            cfg.dataset.width, cfg.dataset.classes);
  init_weights(m, cfg.seed);

  TrainOptions opts;
  opts.batch_size = cfg.batch_size;
  opts.augment_crop = cfg.dataset.augment_crop;
  opts.augment_flip = cfg.dataset.augment_flip;
  opts.crop_pad = cfg.dataset.crop_pad;

  std::vector<int> uniq = ks;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

  std::map<int, Snapshot> snaps;
  OptState opt = OptState::for_model(m);
  int cur = 0;
  for (int kk : uniq) {
    if (kk > cur) {
      train_epochs(m, opt, data.train, cfg.sgd, opts, cfg.seed, cur, kk);
      cur = kk;
    }
    snaps.emplace(kk, Snapshot{m, opt});
  }
  if (cur < cfg.total_epochs)
    train_epochs(m, opt, data.train, cfg.sgd, opts, cfg.seed, cur, cfg.total_epochs);

  const ModelState baseline_final = m;
  const AttentionSummary scores =
      collect_attention(m, data.train, cfg.attention, cfg.batch_size);
  const PruneOutcome out = prune_to_reduction(m, scores, target_red_pct, cfg.prune_metric);

  std::vector<SweepPoint> pts;
  for (size_t i = 0; i < ks.size(); ++i) {
    const Snapshot& s = snaps.at(ks[i]);
    ModelState mk = s.model;
    OptState ok = s.opt;
    mk.masks = out.masks;
    apply_masks_to_storage(mk);
    zero_masked_velocity(ok, mk);
    mk.epoch = ks[i];
    train_epochs(mk, ok, data.train, cfg.sgd, opts, cfg.seed, ks[i], cfg.total_epochs);
    SweepPoint p;
    p.k = ks[i];
    p.acc = evaluate_top1(mk, data.test, cfg.batch_size);
    p.stability = stability_to_pruning(mk, baseline_final, mk.masks);
    p.params_red_pct =
        100.0 * (1.0 - static_cast<double>(total_accounting(mk).total_params) /
                           static_cast<double>(out.before.total_params));
    pts.push_back(p);
  }
  return pts;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepPoint>& pts) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f << "k,accuracy,stability\n";
  char buf[96];
  for (const SweepPoint& p : pts) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g\n", p.k, p.acc, p.stability);
    f << buf;
  }
}

}  // namespace prunekit
