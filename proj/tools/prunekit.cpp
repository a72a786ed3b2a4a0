// Command line front end: run experiments, verify run directories, strip
// pruned filters out of checkpoints, evaluate checkpoints, and run the
// non-adaptive comparison baselines.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prunekit/ablate.hpp"
#include "prunekit/checkpoint.hpp"
#include "prunekit/config.hpp"
#include "prunekit/report.hpp"
#include "prunekit/runner.hpp"

using namespace prunekit;
using nlohmann::json;

namespace {

// 0 success/converged, 1 bad input, 2 run failed or report disagrees,
// 3 round budget exhausted, 4 I/O trouble.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFailed = 2;
constexpr int kExitBudget = 3;
constexpr int kExitIo = 4;

int cmd_run(const std::string& config_path, bool seed_set, uint64_t seed,
            const std::string& dir) {
  RunConfig cfg = load_run_config(config_path);
  if (seed_set) cfg.seed = seed;
  const RunResult res = run_experiment(cfg, dir);
  const RoundRecord& fin = res.rounds.at(res.final_round);
  std::printf("run_dir %s\n", res.run_dir.c_str());
  std::printf("status %s\n", res.status.c_str());
  std::printf("rounds_run %d\n", static_cast<int>(res.rounds.size()) - 1);
  std::printf("baseline_acc %.10g\n", res.baseline_acc);
  std::printf("final_round %d\n", res.final_round);
  std::printf("final_acc %.10g\n", res.final_acc);
  std::printf("acc_loss %.10g\n", fin.acc_loss);
  std::printf("params_red_pct %.10g\n", fin.params_red_pct);
  std::printf("flops_red_pct %.10g\n", fin.flops_red_pct);
  if (res.status == "converged") return kExitOk;
  if (res.status == "budget_exhausted") return kExitBudget;
  return kExitFailed;
}

int cmd_report(const std::string& dir, const std::string& fmt) {
  const RunReport rep = build_report(dir);
  if (fmt == "json")
    print_report_json(rep, std::cout);
  else
    print_report_csv(rep, std::cout);
  if (rep.discrepancies > 0) {
    std::cerr << "error: " << rep.discrepancies
              << " round record(s) disagree with their checkpoints\n";
    return kExitFailed;
  }
  return kExitOk;
}

int cmd_export(const std::string& ckpt, const std::string& out) {
  const ModelState m = load_checkpoint(ckpt);
  // "before" is what the file stores: every filter slot, pruned ones included.
  ModelState dense = m;
  for (FilterMask& mask : dense.masks) mask.bits.assign(mask.bits.size(), 1);
  const Accounting before = total_accounting(dense);
  const ModelState compact = export_compact(m);
  const Accounting after = total_accounting(compact);
  save_checkpoint(compact, out);
  std::printf("wrote %s\n", out.c_str());
  std::printf("params %lld -> %lld\n", before.total_params, after.total_params);
  std::printf("flops %lld -> %lld\n", before.total_flops, after.total_flops);
  return kExitOk;
}

// The spec argument is either inline JSON (starts with '{') or a path to a
// JSON file holding the same dataset object a run config uses.
DatasetSpec dataset_from_arg(const std::string& arg) {
  json parsed;
  std::string label = arg;
  try {
    if (!arg.empty() && arg.front() == '{') {
      label = "inline dataset spec";
      parsed = json::parse(arg);
    } else {
      std::ifstream f(arg, std::ios::binary);
      if (!f) throw ConfigError("cannot open dataset spec: " + arg);
      parsed = json::parse(f);
    }
  } catch (const json::exception& e) {
    throw ConfigError(label + ": " + e.what());
  }
  std::vector<std::string> unknown;
  DatasetSpec spec = parse_dataset_spec(parsed, unknown);
  if (!unknown.empty()) {
    std::string msg = "unknown dataset keys:";
    for (const std::string& k : unknown) msg += " " + k;
    throw ConfigError(msg);
  }
  spec.validate();
  return spec;
}

int cmd_eval(const std::string& ckpt, const std::string& dataset_arg, uint64_t seed,
             int batch) {
  const ModelState m = load_checkpoint(ckpt);
  const DatasetSpec spec = dataset_from_arg(dataset_arg);
  const DataBundle data = load_dataset(spec, seed);
  const Accounting acct = total_accounting(m);
  std::printf("params %lld\n", acct.total_params);
  std::printf("flops %lld\n", acct.total_flops);
  std::printf("top1_test %.10g\n", evaluate_top1(m, data.test, batch));
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& mode, bool rate_set,
               double rate) {
  const RunConfig cfg = load_run_config(config_path);
  if (mode == "attention_function_sweep") {
    write_ablation_csv(std::cout, attention_function_sweep(cfg, rate_set ? rate : 30.0));
  } else if (mode == "oneshot") {
    write_ablation_csv(std::cout, {oneshot_prune(cfg, rate_set ? rate : 30.0)});
  } else {
    if (!rate_set)
      throw ConfigError("--rate is required for mode " + mode);
    const FixedRateResult res =
        fixed_rate_prune(cfg, rate, /*by_attention=*/mode == "fixed_rate_iap");
    write_fixed_rate_csv(std::cout, res.rows);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"structured filter pruning toolkit"};
  app.require_subcommand(1);

  std::string run_config, run_dir;
  uint64_t run_seed = 0;
  CLI::App* run = app.add_subcommand("run", "train, prune adaptively, write a run dir");
  run->add_option("--config", run_config, "run config JSON file")->required();
  CLI::Option* run_seed_opt =
      run->add_option("--seed", run_seed, "override the config seed");
  run->add_option("--dir", run_dir, "explicit run directory (must not exist yet)");

  std::string report_dir, report_fmt = "csv";
  CLI::App* report = app.add_subcommand("report", "verify a run dir against checkpoints");
  report->add_option("--dir", report_dir, "run directory")->required();
  report->add_option("--format", report_fmt, "csv or json")
      ->check(CLI::IsMember({"csv", "json"}));

  std::string exp_ckpt, exp_out;
  CLI::App* exp = app.add_subcommand("export", "strip pruned filters from a checkpoint");
  exp->add_option("--ckpt", exp_ckpt, "source checkpoint")->required();
  exp->add_option("--out", exp_out, "compacted checkpoint to write")->required();

  std::string eval_ckpt, eval_dataset;
  uint64_t eval_seed = 42;
  int eval_batch = 256;
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint's test accuracy");
  ev->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate")->required();
  ev->add_option("--dataset", eval_dataset, "dataset spec JSON (file path or inline)")
      ->required();
  ev->add_option("--seed", eval_seed, "seed for synthetic data generation");
  ev->add_option("--batch", eval_batch, "evaluation batch size");

  std::string ab_config, ab_mode;
  double ab_rate = 0.0;
  CLI::App* ab = app.add_subcommand("ablate", "comparison baselines, CSV on stdout");
  ab->add_option("--config", ab_config, "run config JSON file")->required();
  ab->add_option("--mode", ab_mode, "which baseline to run")
      ->required()
      ->check(CLI::IsMember({"attention_function_sweep", "fixed_rate_iap",
                             "fixed_rate_ilp", "oneshot"}));
  CLI::Option* ab_rate_opt = ab->add_option(
      "--rate", ab_rate,
      "per-round prune rate %% for fixed-rate modes; target reduction %% otherwise");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (run->parsed())
      return cmd_run(run_config, run_seed_opt->count() > 0, run_seed, run_dir);
    if (report->parsed()) return cmd_report(report_dir, report_fmt);
    if (exp->parsed()) return cmd_export(exp_ckpt, exp_out);
    if (ev->parsed()) return cmd_eval(eval_ckpt, eval_dataset, eval_seed, eval_batch);
    if (ab->parsed())
      return cmd_ablate(ab_config, ab_mode, ab_rate_opt->count() > 0, ab_rate);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const PolicyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TopologyError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
