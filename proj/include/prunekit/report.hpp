#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "prunekit/checkpoint.hpp"
#include "prunekit/errors.hpp"
#include "prunekit/runner.hpp"

namespace prunekit {

struct ReportRow {
  RoundRecord stored;
  bool has_checkpoint = false;
  long long recomputed_params = 0;
  long long recomputed_flops = 0;
  double recomputed_params_red = std::numeric_limits<double>::quiet_NaN();
  double recomputed_flops_red = std::numeric_limits<double>::quiet_NaN();
  bool verified = false;
  bool discrepancy = false;
};

struct RunReport {
  std::string run_dir;
  nlohmann::json final_report;  // empty object when the file is absent
  std::vector<ReportRow> rows;
  int discrepancies = 0;
};

// Rebuilds every reduction percentage from the checkpoints on disk instead of
// trusting the stored records; any disagreement beyond 1e-9 is a discrepancy.
inline RunReport build_report(const std::string& run_dir) {
  namespace fs = std::filesystem;
  RunReport rep;
  rep.run_dir = run_dir;
  rep.final_report = nlohmann::json::object();

  const fs::path rounds_dir = fs::path(run_dir) / "rounds";
  if (!fs::is_directory(rounds_dir))
    throw DataError("not a run directory (no rounds/): " + run_dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(rounds_dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw DataError("no round records in " + run_dir);

  for (const fs::path& p : files) {
    std::ifstream f(p);
    if (!f) throw DataError("cannot read " + p.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(p.string() + " is not valid JSON: " + e.what());
    }
    ReportRow row;
    row.stored = round_from_json(j);
    rep.rows.push_back(std::move(row));
  }

  const RoundRecord& r0 = rep.rows.front().stored;
  if (r0.round != 0 || r0.checkpoint.empty())
    throw CheckpointError("baseline round checkpoint missing from " + run_dir);
  const ModelState m0 = load_checkpoint(run_dir + "/" + r0.checkpoint);
  const Accounting base = total_accounting(m0);

  for (ReportRow& row : rep.rows) {
    if (row.stored.checkpoint.empty()) continue;  // deleted after the decision
    const fs::path cp = fs::path(run_dir) / row.stored.checkpoint;
    if (!fs::exists(cp))
      throw CheckpointError("recorded checkpoint missing: " + cp.string());
    const ModelState mm = load_checkpoint(cp.string());
    const Accounting a = total_accounting(mm);
    row.has_checkpoint = true;
    row.recomputed_params = a.total_params;
    row.recomputed_flops = a.total_flops;
    row.recomputed_params_red =
        100.0 * (1.0 - static_cast<double>(a.total_params) /
                           static_cast<double>(base.total_params));
    row.recomputed_flops_red =
        100.0 * (1.0 - static_cast<double>(a.total_flops) /
                           static_cast<double>(base.total_flops));
    const bool ok =
        std::fabs(row.recomputed_params_red - row.stored.params_red_pct) <= 1e-9 &&
        std::fabs(row.recomputed_flops_red - row.stored.flops_red_pct) <= 1e-9 &&
        row.recomputed_params == row.stored.params_remaining &&
        row.recomputed_flops == row.stored.flops_remaining;
    row.verified = ok;
    row.discrepancy = !ok;
    if (!ok) ++rep.discrepancies;
  }

  const fs::path fr = fs::path(run_dir) / "final_report.json";
  if (fs::exists(fr)) {
    std::ifstream f(fr);
    try {
      rep.final_report = nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(fr.string() + " is not valid JSON: " + e.what());
    }
  }
  return rep;
}

// CSV view; reduction columns come from the recomputation wherever a
// checkpoint exists, falling back to stored values for deleted rounds.
inline void print_report_csv(const RunReport& rep, std::ostream& os) {
  os << "round,T,lambda,acc,acc_loss,params_red_pct,flops_red_pct,action,verified\n";
  char buf[256];
  for (const ReportRow& row : rep.rows) {
    const RoundRecord& s = row.stored;
    const double pr = row.has_checkpoint ? row.recomputed_params_red : s.params_red_pct;
    const double fr = row.has_checkpoint ? row.recomputed_flops_red : s.flops_red_pct;
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%s,%d\n",
                  s.round, s.T, s.lambda, s.acc, s.acc_loss, pr, fr,
                  s.action.c_str(), row.verified ? 1 : 0);
    os << buf;
  }
}

inline void print_report_json(const RunReport& rep, std::ostream& os) {
  nlohmann::ordered_json j;
  j["run_dir"] = rep.run_dir;
  j["status"] = rep.final_report.value("status", std::string("unknown"));
  j["discrepancies"] = rep.discrepancies;
  j["rounds"] = nlohmann::ordered_json::array();
  for (const ReportRow& row : rep.rows) {
    nlohmann::ordered_json r = round_to_json(row.stored);
    if (row.has_checkpoint) {
      r["recomputed"] = {{"params", row.recomputed_params},
                         {"flops", row.recomputed_flops},
                         {"params_red_pct", row.recomputed_params_red},
                         {"flops_red_pct", row.recomputed_flops_red}};
    }
    r["verified"] = row.verified;
    j["rounds"].push_back(std::move(r));
  }
  j["final_report"] = rep.final_report;
  os << j.dump(2) << "\n";
}

}  // namespace prunekit
