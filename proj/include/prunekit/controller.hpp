#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "prunekit/errors.hpp"
#include "prunekit/pruning.hpp"

namespace prunekit {

enum class PolicyKind { AccuracyGuaranteed, MemoryConstrained, FlopsConstrained };

inline const char* policy_kind_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::AccuracyGuaranteed: return "accuracy_guaranteed";
    case PolicyKind::MemoryConstrained: return "memory_constrained";
    case PolicyKind::FlopsConstrained: return "flops_constrained";
  }
  throw PolicyError("unknown policy kind");
}

inline PolicyKind policy_kind_from_name(const std::string& s) {
  if (s == "accuracy_guaranteed") return PolicyKind::AccuracyGuaranteed;
  if (s == "memory_constrained") return PolicyKind::MemoryConstrained;
  if (s == "flops_constrained") return PolicyKind::FlopsConstrained;
  throw ConfigError(
      "policy.kind must be accuracy_guaranteed, memory_constrained or "
      "flops_constrained (got \"" +
      s + "\")");
}

struct Policy {
  PolicyKind kind = PolicyKind::AccuracyGuaranteed;
  double target = std::numeric_limits<double>::quiet_NaN();
  // dimension watched for convergence under accuracy_guaranteed; the
  // constrained policies watch their own dimension
  PruneMetric minimize = PruneMetric::Params;

  void validate() const {
    if (std::isnan(target)) throw PolicyError("policy.target is required");
    if (target < 0.0) throw PolicyError("policy.target must be >= 0");
  }
};

struct ControllerConfig {
  double t_init = 0.0;
  double lambda_init = 0.005;
  int max_rollbacks = 3;
  int convergence_window = 3;
  double convergence_epsilon_pct = 0.1;
  double exponent_base = 2.0;

  void validate() const {
    if (t_init < 0.0) throw ConfigError("controller.t_init must be >= 0");
    if (lambda_init <= 0.0) throw ConfigError("controller.lambda_init must be > 0");
    if (max_rollbacks < 1) throw ConfigError("controller.max_rollbacks must be >= 1");
    if (convergence_window < 1)
      throw ConfigError("controller.convergence_window must be >= 1");
    if (convergence_epsilon_pct <= 0.0)
      throw ConfigError("controller.convergence_epsilon_pct must be > 0");
    if (exponent_base <= 1.0)
      throw ConfigError("controller.exponent_base must be > 1");
  }
};

// All percentages; current_* are absolute model costs after this round.
struct RoundMetrics {
  double acc = std::numeric_limits<double>::quiet_NaN();
  double acc_loss = std::numeric_limits<double>::quiet_NaN();
  double params_reduction = std::numeric_limits<double>::quiet_NaN();
  double flops_reduction = std::numeric_limits<double>::quiet_NaN();
  long long current_params = 0;
  long long current_flops = 0;
};

struct LedgerEntry {
  int round = 0;
  double T = 0.0;
  double lambda = 0.0;
  RoundMetrics metrics;
  double metric_value = 0.0;  // value on the policy's dimension
  double window_value = 0.0;  // size value fed to the convergence window
  bool acceptable = false;
  bool invalidated = false;
  int rollback_count = 0;  // times this round has been a rollback target
  std::string checkpoint;
};

enum class Action { Continue, Rollback, Terminate, Fail };

inline const char* action_name(Action a) {
  switch (a) {
    case Action::Continue: return "continue";
    case Action::Rollback: return "rollback";
    case Action::Terminate: return "terminate";
    case Action::Fail: return "fail";
  }
  throw PolicyError("unknown action");
}

struct Decision {
  Action action = Action::Continue;
  int to_round = -1;  // rollback target, -1 otherwise
  double next_T = 0.0;
  double next_lambda = 0.0;
};

// Threshold-adaptation state machine. Rounds are recorded first (baseline
// round 0 included), then evaluated; evaluation advances T on acceptable
// rounds and walks the ledger backwards on unacceptable ones, halving the
// step for every repeat rollback to the same round and invalidating rounds
// that have been rolled back to max_rollbacks times.
class Controller {
 public:
  Controller(const Policy& policy, const ControllerConfig& cfg)
      : policy_(policy), cfg_(cfg), T_(cfg.t_init), lambda_(cfg.lambda_init) {
    policy_.validate();
    cfg_.validate();
  }

  double T() const { return T_; }
  double lambda() const { return lambda_; }
  const Policy& policy() const { return policy_; }
  const ControllerConfig& config() const { return cfg_; }
  const std::vector<LedgerEntry>& ledger() const { return ledger_; }

  double policy_value(const RoundMetrics& m) const {
    switch (policy_.kind) {
      case PolicyKind::AccuracyGuaranteed: return require(m.acc_loss, "acc_loss");
      case PolicyKind::MemoryConstrained:
        return require(m.params_reduction, "params_reduction");
      case PolicyKind::FlopsConstrained:
        return require(m.flops_reduction, "flops_reduction");
    }
    throw PolicyError("unknown policy kind");
  }

  // acceptable means strictly below the target
  bool acceptable(const RoundMetrics& m) const {
    return policy_value(m) < policy_.target;
  }

  double window_value(const RoundMetrics& m) const {
    PruneMetric dim = policy_.minimize;
    if (policy_.kind == PolicyKind::MemoryConstrained) dim = PruneMetric::Params;
    if (policy_.kind == PolicyKind::FlopsConstrained) dim = PruneMetric::Flops;
    return dim == PruneMetric::Params ? static_cast<double>(m.current_params)
                                      : static_cast<double>(m.current_flops);
  }

  const LedgerEntry& record_round(const RoundMetrics& m,
                                  const std::string& checkpoint) {
    LedgerEntry e;
    e.round = static_cast<int>(ledger_.size());
    e.T = T_;
    e.lambda = lambda_;
    e.metrics = m;
    e.metric_value = policy_value(m);
    e.window_value = window_value(m);
    e.acceptable = acceptable(m);
    e.checkpoint = checkpoint;
    ledger_.push_back(std::move(e));
    return ledger_.back();
  }

  // The last convergence_window recorded steps all moved by less than the
  // epsilon, relative to the previous round. Steps whose value still equals
  // the round-0 baseline do not count: before any pruning bites, a flat
  // window means "nothing happened yet", not "the size converged".
  bool window_converged() const {
    const int W = cfg_.convergence_window;
    if (static_cast<int>(ledger_.size()) < W + 1) return false;
    const double v0 = ledger_.front().window_value;
    const double eps = cfg_.convergence_epsilon_pct / 100.0;
    for (size_t i = ledger_.size() - W; i < ledger_.size(); ++i) {
      const double prev = ledger_[i - 1].window_value;
      const double cur = ledger_[i].window_value;
      if (cur == v0 || prev == 0.0) return false;
      if (!(std::fabs(cur - prev) / std::fabs(prev) < eps)) return false;
    }
    return true;
  }

  // Decide what happens after the most recently recorded round, updating
  // T, lambda and the rollback bookkeeping.
  Decision evaluate_round() {
    if (ledger_.empty()) throw PolicyError("evaluate_round: no round recorded");
    Decision d;
    if (ledger_.back().acceptable) {
      if (window_converged()) {
        d.action = Action::Terminate;
        d.next_T = T_;
        d.next_lambda = lambda_;
        return d;
      }
      d.action = Action::Continue;
      d.next_lambda = lambda_;
      d.next_T = T_ + lambda_;
      T_ = d.next_T;
      return d;
    }
    for (;;) {
      int k = -1;
      for (int i = static_cast<int>(ledger_.size()) - 1; i >= 0; --i)
        if (ledger_[i].acceptable && !ledger_[i].invalidated) {
          k = i;
          break;
        }
      if (k < 0) {
        d.action = Action::Fail;
        d.next_T = T_;
        d.next_lambda = lambda_;
        return d;
      }
      if (ledger_[k].rollback_count >= cfg_.max_rollbacks) {
        ledger_[k].invalidated = true;
        continue;
      }
      const int n_prev = ledger_[k].rollback_count;
      d.action = Action::Rollback;
      d.to_round = ledger_[k].round;
      d.next_lambda =
          ledger_[k].lambda / std::pow(cfg_.exponent_base, n_prev + 1);
      d.next_T = ledger_[k].T + d.next_lambda;
      ledger_[k].rollback_count += 1;
      T_ = d.next_T;
      lambda_ = d.next_lambda;
      return d;
    }
  }

 private:
  static double require(double v, const char* field) {
    if (std::isnan(v))
      throw PolicyError(std::string("round metrics missing ") + field +
                        " required by the policy");
    return v;
  }

  Policy policy_;
  ControllerConfig cfg_;
  double T_;
  double lambda_;
  std::vector<LedgerEntry> ledger_;
};

}  // namespace prunekit
