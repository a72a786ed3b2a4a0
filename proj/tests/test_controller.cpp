#include "prunekit/controller.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "prunekit/rng.hpp"
#include "support/oracle_sim.hpp"

using namespace prunekit;

namespace {

Policy acc_policy(double target = 1.0) {
  Policy p;
  p.kind = PolicyKind::AccuracyGuaranteed;
  p.target = target;
  p.minimize = PruneMetric::Params;
  return p;
}

RoundMetrics metrics(double acc_loss, long long params = 10000) {
  RoundMetrics m;
  m.acc = 90.0 - acc_loss;
  m.acc_loss = acc_loss;
  m.params_reduction = 0.0;
  m.flops_reduction = 0.0;
  m.current_params = params;
  m.current_flops = params * 4;
  return m;
}

}  // namespace

TEST(Controller, AcceptableRoundsStepTByLambda) {
  Controller c(acc_policy(), ControllerConfig{});
  c.record_round(metrics(0.0), "ck0");  // baseline, not evaluated
  std::vector<double> t_used;
  for (int r = 1; r <= 4; ++r) {
    t_used.push_back(c.T());
    c.record_round(metrics(0.1, 10000 - 100 * r), "ck");
    Decision d = c.evaluate_round();
    ASSERT_EQ(d.action, Action::Continue);
    EXPECT_DOUBLE_EQ(d.next_lambda, 0.005);
  }
  ASSERT_EQ(t_used.size(), 4u);
  EXPECT_DOUBLE_EQ(t_used[0], 0.0);
  EXPECT_NEAR(t_used[1], 0.005, 1e-15);
  EXPECT_NEAR(t_used[2], 0.010, 1e-15);
  EXPECT_NEAR(t_used[3], 0.015, 1e-15);
}

TEST(Controller, RollbackHalvesLambdaAndAnchorsAtTarget) {
  Controller c(acc_policy(), ControllerConfig{});
  c.record_round(metrics(0.0), "ck0");
  // rounds 1..3 acceptable at T = 0, 0.005, 0.010
  for (int r = 1; r <= 3; ++r) {
    c.record_round(metrics(0.1, 10000 - 100 * r), "ck");
    ASSERT_EQ(c.evaluate_round().action, Action::Continue);
  }
  EXPECT_NEAR(c.T(), 0.015, 1e-15);
  // round 4 at T = 0.015 overshoots
  c.record_round(metrics(2.0, 9000), "ck4");
  Decision d = c.evaluate_round();
  ASSERT_EQ(d.action, Action::Rollback);
  EXPECT_EQ(d.to_round, 3);
  EXPECT_NEAR(d.next_lambda, 0.0025, 1e-15);
  EXPECT_NEAR(d.next_T, 0.0125, 1e-12);
  EXPECT_NEAR(c.T(), 0.0125, 1e-12);
  EXPECT_NEAR(c.lambda(), 0.0025, 1e-15);
  EXPECT_EQ(c.ledger()[3].rollback_count, 1);

  // a second overshoot rolls back to the same round and quarters the step
  c.record_round(metrics(2.0, 9000), "ck5");
  d = c.evaluate_round();
  ASSERT_EQ(d.action, Action::Rollback);
  EXPECT_EQ(d.to_round, 3);
  EXPECT_NEAR(d.next_lambda, 0.00125, 1e-15);
  EXPECT_NEAR(d.next_T, 0.01125, 1e-12);
  EXPECT_EQ(c.ledger()[3].rollback_count, 2);
}

TEST(Controller, ExactlyAtTargetIsUnacceptable) {
  Controller c(acc_policy(1.0), ControllerConfig{});
  EXPECT_TRUE(c.acceptable(metrics(0.999)));
  EXPECT_FALSE(c.acceptable(metrics(1.0)));
  EXPECT_FALSE(c.acceptable(metrics(1.001)));
}

TEST(Controller, InvalidatedRoundIsNeverRevisited) {
  ControllerConfig cfg;
  cfg.max_rollbacks = 2;
  Controller c(acc_policy(), cfg);
  c.record_round(metrics(0.0), "ck0");
  for (int r = 1; r <= 3; ++r) {
    c.record_round(metrics(0.1, 10000 - 100 * r), "ck");
    ASSERT_EQ(c.evaluate_round().action, Action::Continue);
  }
  // two overshoots exhaust round 3's rollback budget
  for (int i = 0; i < 2; ++i) {
    c.record_round(metrics(2.0, 9000), "ck");
    Decision d = c.evaluate_round();
    ASSERT_EQ(d.action, Action::Rollback);
    ASSERT_EQ(d.to_round, 3);
  }
  // third overshoot invalidates round 3 and falls through to round 2
  c.record_round(metrics(2.0, 9000), "ck");
  Decision d = c.evaluate_round();
  ASSERT_EQ(d.action, Action::Rollback);
  EXPECT_EQ(d.to_round, 2);
  EXPECT_TRUE(c.ledger()[3].invalidated);
  EXPECT_FALSE(c.ledger()[2].invalidated);
  // round 2 ran at T=0.005 with lambda 0.005, no prior rollbacks
  EXPECT_NEAR(d.next_lambda, 0.0025, 1e-15);
  EXPECT_NEAR(d.next_T, 0.005 + 0.0025, 1e-12);
}

TEST(Controller, FailsWhenNoAcceptableRoundRemains) {
  ControllerConfig cfg;
  cfg.max_rollbacks = 1;
  Controller c(acc_policy(), cfg);
  c.record_round(metrics(0.0), "ck0");
  c.record_round(metrics(5.0, 9000), "ck1");
  Decision d = c.evaluate_round();
  ASSERT_EQ(d.action, Action::Rollback);
  EXPECT_EQ(d.to_round, 0);  // baseline is the only acceptable round
  c.record_round(metrics(5.0, 9000), "ck2");
  d = c.evaluate_round();
  EXPECT_EQ(d.action, Action::Fail);
  EXPECT_TRUE(c.ledger()[0].invalidated);
}

TEST(Controller, ZeroTargetMemoryPolicyFailsImmediately) {
  Policy p;
  p.kind = PolicyKind::MemoryConstrained;
  p.target = 0.0;
  Controller c(p, ControllerConfig{});
  RoundMetrics m = metrics(0.0);
  m.params_reduction = 0.0;
  c.record_round(m, "ck0");
  EXPECT_FALSE(c.ledger()[0].acceptable);  // 0 < 0 is false
  c.record_round(m, "ck1");
  EXPECT_EQ(c.evaluate_round().action, Action::Fail);
}

TEST(Controller, ConstrainedPoliciesReadTheirOwnDimension) {
  Policy p;
  p.kind = PolicyKind::FlopsConstrained;
  p.target = 50.0;
  Controller c(p, ControllerConfig{});
  RoundMetrics m = metrics(0.0);
  m.params_reduction = 80.0;  // irrelevant to this policy
  m.flops_reduction = 10.0;
  EXPECT_TRUE(c.acceptable(m));
  m.flops_reduction = 60.0;
  EXPECT_FALSE(c.acceptable(m));
}

TEST(Controller, MissingPolicyDimensionThrows) {
  Controller c(acc_policy(), ControllerConfig{});
  RoundMetrics m;
  m.current_params = 100;
  EXPECT_THROW(c.record_round(m, "ck"), PolicyError);

  Policy p;
  p.kind = PolicyKind::MemoryConstrained;
  p.target = 40.0;
  Controller c2(p, ControllerConfig{});
  RoundMetrics m2;
  m2.acc_loss = 0.5;  // present, but not the policy's dimension
  m2.current_params = 100;
  EXPECT_THROW(c2.record_round(m2, "ck"), PolicyError);
}

TEST(Controller, PolicyValidation) {
  Policy p;  // target defaults to NaN
  EXPECT_THROW(Controller(p, ControllerConfig{}), PolicyError);
  try {
    Controller c(p, ControllerConfig{});
    FAIL() << "expected PolicyError";
  } catch (const PolicyError& e) {
    EXPECT_NE(std::string(e.what()).find("policy.target"), std::string::npos);
  }
  p.target = -1.0;
  EXPECT_THROW(Controller(p, ControllerConfig{}), PolicyError);
  ControllerConfig bad;
  bad.lambda_init = 0.0;
  EXPECT_THROW(Controller(acc_policy(), bad), ConfigError);
  bad = ControllerConfig{};
  bad.exponent_base = 1.0;
  EXPECT_THROW(Controller(acc_policy(), bad), ConfigError);
}

TEST(Controller, ConfigurableExponentBase) {
  ControllerConfig cfg;
  cfg.exponent_base = 4.0;
  Controller c(acc_policy(), cfg);
  c.record_round(metrics(0.0), "ck0");
  c.record_round(metrics(0.1, 9999), "ck1");
  ASSERT_EQ(c.evaluate_round().action, Action::Continue);
  c.record_round(metrics(2.0, 9000), "ck2");
  Decision d = c.evaluate_round();
  ASSERT_EQ(d.action, Action::Rollback);
  EXPECT_NEAR(d.next_lambda, 0.005 / 4.0, 1e-15);
}

// Window semantics. The window needs convergence_window consecutive recorded
// steps below the epsilon, and a value equal to the round-0 baseline never
// counts (a flat window before pruning bites is not convergence).
TEST(ControllerWindow, TerminatesAfterThreeSmallSteps) {
  Controller c(acc_policy(), ControllerConfig{});
  c.record_round(metrics(0.0, 1000000), "ck0");
  const long long sizes[] = {950000, 949100, 948300, 947500};
  Action last = Action::Continue;
  for (long long s : sizes) {
    c.record_round(metrics(0.1, s), "ck");
    last = c.evaluate_round().action;
  }
  // steps: 5%, 0.095%, 0.084%, 0.084% -> the last three are all below 0.1%
  EXPECT_EQ(last, Action::Terminate);
}

TEST(ControllerWindow, PointOneOnePercentStepsDoNotTerminate) {
  Controller c(acc_policy(), ControllerConfig{});
  c.record_round(metrics(0.0, 1000000), "ck0");
  // each step is 0.11% of the previous value
  const long long sizes[] = {950000, 948955, 947911, 946868, 945827, 944787};
  for (long long s : sizes) {
    c.record_round(metrics(0.1, s), "ck");
    EXPECT_EQ(c.evaluate_round().action, Action::Continue);
  }
}

TEST(ControllerWindow, ExactlyPointOnePercentDoesNotCount) {
  Controller c(acc_policy(), ControllerConfig{});
  c.record_round(metrics(0.0, 1000000), "ck0");
  // first step exactly 0.1%, later ones a hair above; strict < never fires
  const long long sizes[] = {999000, 998001, 997002, 996003};
  for (long long s : sizes) {
    c.record_round(metrics(0.1, s), "ck");
    EXPECT_EQ(c.evaluate_round().action, Action::Continue);
  }
}

TEST(ControllerWindow, FlatAtBaselineNeverTerminates) {
  Controller c(acc_policy(), ControllerConfig{});
  c.record_round(metrics(0.0, 10000), "ck0");
  for (int r = 0; r < 6; ++r) {
    c.record_round(metrics(0.1, 10000), "ck");
    EXPECT_EQ(c.evaluate_round().action, Action::Continue);
  }
}

TEST(ControllerWindow, FlatAfterRealPruningTerminates) {
  Controller c(acc_policy(), ControllerConfig{});
  c.record_round(metrics(0.0, 10000), "ck0");
  const long long sizes[] = {6000, 6000, 6000, 6000};
  Action last = Action::Continue;
  for (long long s : sizes) {
    c.record_round(metrics(0.1, s), "ck");
    last = c.evaluate_round().action;
  }
  EXPECT_EQ(last, Action::Terminate);
}

TEST(ControllerWindow, SurvivesRollbacksInBetween) {
  Controller c(acc_policy(), ControllerConfig{});
  c.record_round(metrics(0.0, 10000), "ck0");
  c.record_round(metrics(0.1, 9000), "ck1");
  ASSERT_EQ(c.evaluate_round().action, Action::Continue);
  c.record_round(metrics(0.1, 8995), "ck2");
  ASSERT_EQ(c.evaluate_round().action, Action::Continue);
  c.record_round(metrics(2.0, 8991), "ck3");  // overshoot, still recorded
  ASSERT_EQ(c.evaluate_round().action, Action::Rollback);
  c.record_round(metrics(0.1, 8993), "ck4");
  // trailing steps 8995/8991/8993 all moved < 0.1%; rollback did not reset them
  EXPECT_EQ(c.evaluate_round().action, Action::Terminate);
}

TEST(ControllerWindow, UsesFlopsWhenPolicyMinimizesFlops) {
  Policy p = acc_policy();
  p.minimize = PruneMetric::Flops;
  Controller c(p, ControllerConfig{});
  RoundMetrics m = metrics(0.0);
  m.current_params = 10000;
  m.current_flops = 500000;
  c.record_round(m, "ck0");
  // params frozen, flops shrinking fast: no termination under flops window
  for (int r = 1; r <= 5; ++r) {
    m = metrics(0.1);
    m.current_params = 7000;
    m.current_flops = 500000 - 50000 * r;
    c.record_round(m, "ck");
    EXPECT_EQ(c.evaluate_round().action, Action::Continue) << "round " << r;
  }
}

TEST(Controller, DeterministicDecisionSequences) {
  auto run = [](std::vector<std::pair<Action, double>>& out) {
    Controller c(acc_policy(), ControllerConfig{});
    c.record_round(metrics(0.0, 10000), "ck0");
    const double losses[] = {0.1, 0.2, 2.0, 0.3, 2.0, 2.0, 0.4};
    const long long sizes[] = {10000, 9900, 9000, 9890, 9100, 9150, 9880};
    for (int i = 0; i < 7; ++i) {
      c.record_round(metrics(losses[i], sizes[i]), "ck");
      Decision d = c.evaluate_round();
      out.emplace_back(d.action, d.next_T);
    }
  };
  std::vector<std::pair<Action, double>> a, b;
  run(a);
  run(b);
  EXPECT_EQ(a, b);
}

// Closed-loop behaviour against a monotone synthetic model: the controller
// must terminate (not fail) and stop with T within the smallest step it
// reached of the true crossing point.
TEST(ControllerOracle, ConvergesWithinSmallestLambda) {
  CounterRng rng(2024, Stream::Data, 77);
  for (int trial = 0; trial < 10; ++trial) {
    oracle_sim::LinearOracle oracle;
    oracle.slope = 5.0 + 45.0 * rng.uniform();
    oracle.shrink = 0.3 + 0.6 * rng.uniform();
    ControllerConfig cfg;
    cfg.max_rollbacks = 100;  // keep the lambda chain monotone
    Controller ctrl(acc_policy(1.0), cfg);
    oracle_sim::SimResult res = oracle_sim::simulate(oracle, ctrl, 500);
    ASSERT_TRUE(res.terminated) << "trial " << trial << " slope " << oracle.slope;
    ASSERT_FALSE(res.failed);
    const double crossing = oracle.crossing(1.0);
    EXPECT_LT(res.final_T, crossing) << "trial " << trial;
    EXPECT_LE(crossing - res.final_T, res.lambda_min + 1e-12)
        << "trial " << trial << " slope " << oracle.slope << " shrink "
        << oracle.shrink;
  }
}
