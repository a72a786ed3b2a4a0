#include "prunekit/pruning.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "prunekit/model.hpp"
#include "prunekit/rng.hpp"

using namespace prunekit;

TEST(LayerThresholds, SplitsByParamsShare) {
  Accounting acc;
  acc.conv_params = {100, 900};
  acc.conv_params_total = 1000;
  std::vector<double> t = layer_thresholds(0.02, acc, PruneMetric::Params);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_DOUBLE_EQ(t[0], 0.002);
  EXPECT_DOUBLE_EQ(t[1], 0.018);
  EXPECT_NEAR(t[0] + t[1], 0.02, 1e-15);
}

TEST(LayerThresholds, SplitsByFlopsShare) {
  Accounting acc;
  acc.conv_flops = {884736, 9437184};
  acc.conv_flops_total = 10321920;
  std::vector<double> t = layer_thresholds(0.01, acc, PruneMetric::Flops);
  EXPECT_NEAR(t[0], 0.000857142857142857, 1e-15);
  EXPECT_NEAR(t[1], 0.009142857142857143, 1e-15);
  EXPECT_NEAR(t[0] + t[1], 0.01, 1e-15);
}

TEST(LayerThresholds, SumEqualsGlobalThreshold) {
  CounterRng rng(1, Stream::Data, 0);
  for (int trial = 0; trial < 20; ++trial) {
    Accounting acc;
    const int layers = 1 + static_cast<int>(rng.below(5));
    long long total = 0;
    for (int l = 0; l < layers; ++l) {
      const long long v = 1 + static_cast<long long>(rng.below(100000));
      acc.conv_params.push_back(v);
      total += v;
    }
    acc.conv_params_total = total;
    const double T = rng.uniform();
    std::vector<double> t = layer_thresholds(T, acc, PruneMetric::Params);
    double sum = 0.0;
    for (double x : t) sum += x;
    EXPECT_NEAR(sum, T, 1e-12);
  }
}

TEST(LayerThresholds, ZeroTotalThrows) {
  Accounting acc;
  acc.conv_params = {};
  acc.conv_params_total = 0;
  EXPECT_THROW(layer_thresholds(0.01, acc, PruneMetric::Params), AccountingError);
}

TEST(GuardFilter, ArgmaxWithTiesToLowestIndex) {
  FilterMask all(3);
  EXPECT_EQ(guard_filter({0.3, 0.7, 0.2}, all), 1);
  EXPECT_EQ(guard_filter({0.3, 0.7, 0.7}, all), 1);
  EXPECT_EQ(guard_filter({0.7, 0.7, 0.1}, FilterMask(3)), 0);
  FilterMask masked(3);
  masked.bits[1] = 0;  // best filter dead: guard falls to the live argmax
  EXPECT_EQ(guard_filter({0.3, 0.9, 0.2}, masked), 0);
  FilterMask dead(2);
  dead.bits[0] = dead.bits[1] = 0;
  EXPECT_THROW(guard_filter({1.0, 2.0}, dead), PolicyError);
}

namespace {

// conv(1->3, k3, p1) + relu + global avgpool + flatten + linear(3->2) on 4x4
ModelState three_filter_model() {
  ModelState m;
  m.arch_id = "threef";
  m.input_c = 1;
  m.input_h = 4;
  m.input_w = 4;
  m.specs = {LayerSpec::conv(1, 3, 3, 1, 1), LayerSpec::relu(),
             LayerSpec::avgpool(4, 4), LayerSpec::flatten(),
             LayerSpec::linear(3, 2)};
  m.conv_w.emplace_back(3, 1, 3);
  m.linear_w.emplace_back(3, 2);
  m.masks.emplace_back(3);
  init_weights(m, 5);
  validate_model(m);
  return m;
}

AttentionSummary scores_of(std::vector<std::vector<double>> s) {
  AttentionSummary out;
  out.scores = std::move(s);
  out.sample_count = 1;
  return out;
}

}  // namespace

// Single conv layer: its share is 1, so the layer threshold equals T. With
// T = 0.002 and scores {0.001, 0.4, 0.0005}, filters 0 and 2 fall at or
// below the threshold and 1 is the guard.
TEST(PruneRound, ThresholdSelectsLowScorers) {
  ModelState m = three_filter_model();
  PruneOutcome out = prune_round(m, scores_of({{0.001, 0.4, 0.0005}}), 0.002,
                                 PruneMetric::Params);
  ASSERT_EQ(out.thresholds.size(), 1u);
  EXPECT_DOUBLE_EQ(out.thresholds[0], 0.002);
  EXPECT_EQ(out.pruned_filters[0], (std::vector<int>{0, 2}));
  EXPECT_EQ(out.pruned_count, 2);
  EXPECT_EQ(out.masks[0].bits, (std::vector<uint8_t>{0, 1, 0}));
  EXPECT_EQ(out.masks[0].live(), 1);
}

TEST(PruneRound, ZeroThresholdKeepsAllPositiveScores) {
  ModelState m = three_filter_model();
  PruneOutcome out =
      prune_round(m, scores_of({{0.01, 0.5, 0.02}}), 0.0, PruneMetric::Params);
  EXPECT_EQ(out.pruned_count, 0);
  EXPECT_EQ(out.masks[0].bits, m.masks[0].bits);
  EXPECT_EQ(out.after.total_params, out.before.total_params);
}

TEST(PruneRound, ZeroThresholdRemovesDeadFilter) {
  ModelState m = three_filter_model();
  PruneOutcome out =
      prune_round(m, scores_of({{0.1, 0.0, 0.2}}), 0.0, PruneMetric::Params);
  EXPECT_EQ(out.pruned_filters[0], (std::vector<int>{1}));
  EXPECT_EQ(out.masks[0].bits, (std::vector<uint8_t>{1, 0, 1}));
}

TEST(PruneRound, GuardSurvivesArbitrarilyHighThreshold) {
  ModelState m = three_filter_model();
  PruneOutcome out =
      prune_round(m, scores_of({{0.5, 0.5, 0.2}}), 10.0, PruneMetric::Params);
  // tie at the top goes to filter 0; everything else is prunable
  EXPECT_EQ(out.masks[0].bits, (std::vector<uint8_t>{1, 0, 0}));
  EXPECT_EQ(out.pruned_filters[0], (std::vector<int>{1, 2}));
}

TEST(PruneRound, AlreadyMaskedFiltersAreNotRecounted) {
  ModelState m = three_filter_model();
  m.masks[0].bits[2] = 0;
  apply_masks_to_storage(m);
  PruneOutcome out =
      prune_round(m, scores_of({{0.001, 0.4, 0.0}}), 0.01, PruneMetric::Params);
  // only filter 0 is newly pruned; 2 was dead coming in
  EXPECT_EQ(out.pruned_filters[0], (std::vector<int>{0}));
  EXPECT_EQ(out.pruned_count, 1);
  EXPECT_EQ(out.masks[0].bits, (std::vector<uint8_t>{0, 1, 0}));
}

TEST(PruneRound, RaisingTOnlyGrowsThePrunedSet) {
  ModelState m = build_arch("tiny2", 2, 8, 8, 4);
  init_weights(m, 21);
  CounterRng rng(3, Stream::Data, 7);
  AttentionSummary s;
  s.scores.resize(2);
  s.scores[0].resize(4);
  s.scores[1].resize(8);
  for (auto& layer : s.scores)
    for (double& v : layer) v = rng.uniform() * 0.01;
  std::vector<FilterMask> prev;
  for (double T : {0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05}) {
    PruneOutcome out = prune_round(m, s, T, PruneMetric::Params);
    if (!prev.empty()) {
      for (size_t l = 0; l < prev.size(); ++l)
        for (size_t f = 0; f < prev[l].bits.size(); ++f)
          if (!prev[l].bits[f]) {
            ASSERT_FALSE(out.masks[l].bits[f]);
          }
    }
    prev = out.masks;
  }
}

TEST(PruneRound, AccountingPreviewMatchesAppliedModel) {
  ModelState m = build_arch("tiny2", 2, 8, 8, 4);
  init_weights(m, 22);
  AttentionSummary s =
      scores_of({{0.001, 0.5, 0.002, 0.4}, {0.3, 0.001, 0.2, 0.1, 0.003, 0.25, 0.2, 0.15}});
  PruneOutcome out = prune_round(m, s, 0.01, PruneMetric::Params);
  ASSERT_GT(out.pruned_count, 0);
  apply_prune_outcome(m, out);
  Accounting applied = total_accounting(m);
  EXPECT_EQ(applied.total_params, out.after.total_params);
  EXPECT_EQ(applied.total_flops, out.after.total_flops);
  EXPECT_EQ(applied.conv_params, out.after.conv_params);
  EXPECT_LT(out.after.total_params, out.before.total_params);
}

TEST(PruneRound, FlopsMetricUsesFlopsShares) {
  // two convs with equal params but different map sizes: pooling halves the
  // map, so flops shares differ from params shares
  ModelState m;
  m.arch_id = "unequal";
  m.input_c = 4;
  m.input_h = 8;
  m.input_w = 8;
  m.specs = {LayerSpec::conv(4, 4, 3, 1, 1), LayerSpec::relu(),
             LayerSpec::maxpool(2, 2),       LayerSpec::conv(4, 4, 3, 1, 1),
             LayerSpec::relu(),              LayerSpec::avgpool(4, 4),
             LayerSpec::flatten(),           LayerSpec::linear(4, 2)};
  m.conv_w.emplace_back(4, 4, 3);
  m.conv_w.emplace_back(4, 4, 3);
  m.linear_w.emplace_back(4, 2);
  m.masks.emplace_back(4);
  m.masks.emplace_back(4);
  init_weights(m, 8);
  validate_model(m);
  Accounting acc = total_accounting(m);
  ASSERT_EQ(acc.conv_params[0], acc.conv_params[1]);
  ASSERT_EQ(acc.conv_flops[0], 4 * acc.conv_flops[1]);
  std::vector<double> tp = layer_thresholds(0.01, acc, PruneMetric::Params);
  std::vector<double> tf = layer_thresholds(0.01, acc, PruneMetric::Flops);
  EXPECT_DOUBLE_EQ(tp[0], tp[1]);
  EXPECT_DOUBLE_EQ(tf[0], 4 * tf[1]);
  EXPECT_NEAR(tf[0] + tf[1], 0.01, 1e-15);
}

TEST(PruneRound, RejectsMismatchedScores) {
  ModelState m = three_filter_model();
  EXPECT_THROW(prune_round(m, scores_of({{0.1, 0.2}}), 0.0, PruneMetric::Params),
               PolicyError);
  EXPECT_THROW(
      prune_round(m, scores_of({{0.1, 0.2, 0.3}, {0.4}}), 0.0, PruneMetric::Params),
      PolicyError);
}

TEST(ApplyPruneOutcome, ZeroesPrunedStorage) {
  ModelState m = three_filter_model();
  PruneOutcome out = prune_round(m, scores_of({{0.001, 0.4, 0.0005}}), 0.002,
                                 PruneMetric::Params);
  apply_prune_outcome(m, out);
  const size_t fs = m.conv_w[0].filter_size();
  for (int f : {0, 2}) {
    for (size_t i = 0; i < fs; ++i) ASSERT_EQ(m.conv_w[0].filters[f * fs + i], 0.0f);
    ASSERT_EQ(m.conv_w[0].bias[f], 0.0f);
  }
  bool live_nonzero = false;
  for (size_t i = 0; i < fs; ++i)
    live_nonzero = live_nonzero || m.conv_w[0].filters[1 * fs + i] != 0.0f;
  EXPECT_TRUE(live_nonzero);
}

TEST(WeightL1, SumsAbsoluteFilterWeights) {
  ModelState m;
  m.arch_id = "l1";
  m.input_c = 1;
  m.input_h = 2;
  m.input_w = 2;
  m.specs = {LayerSpec::conv(1, 2, 1), LayerSpec::flatten(), LayerSpec::linear(8, 2)};
  m.conv_w.emplace_back(2, 1, 1);
  m.conv_w[0].filters = {3.0f, -4.0f};
  m.conv_w[0].bias = {100.0f, 100.0f};  // bias is not part of the norm
  m.linear_w.emplace_back(8, 2);
  m.masks.emplace_back(2);
  validate_model(m);
  AttentionSummary s = weight_l1_scores(m);
  ASSERT_EQ(s.scores.size(), 1u);
  EXPECT_DOUBLE_EQ(s.scores[0][0], 3.0);
  EXPECT_DOUBLE_EQ(s.scores[0][1], 4.0);
  m.masks[0].bits[1] = 0;
  apply_masks_to_storage(m);
  s = weight_l1_scores(m);
  EXPECT_DOUBLE_EQ(s.scores[0][1], 0.0);
}

TEST(PruneToReduction, ReturnsTheClosestAchievableReduction) {
  ModelState m = build_arch("tiny2", 1, 6, 6, 3);
  init_weights(m, 9);
  AttentionSummary sc = scores_of({{0.1, 0.5, 0.3, 0.05},
                                   {0.2, 0.9, 0.4, 0.05, 0.6, 0.3, 0.15, 0.7}});
  const Accounting base = total_accounting(m);
  auto red_of = [&](const PruneOutcome& o) {
    return 100.0 * (1.0 - static_cast<double>(o.after.total_params) /
                              static_cast<double>(base.total_params));
  };

  // every reachable reduction sits at a score boundary; enumerate them all
  std::vector<double> candidates{0.0, 1e9};
  for (size_t l = 0; l < sc.scores.size(); ++l) {
    const double share = static_cast<double>(base.conv_params[l]) /
                         static_cast<double>(base.conv_params_total);
    for (double s : sc.scores[l]) candidates.push_back(s / share);
  }
  std::vector<double> reachable;
  for (double t : candidates)
    reachable.push_back(red_of(prune_round(m, sc, t, PruneMetric::Params)));

  double prev = -1.0;
  for (double target : {0.0, 7.0, 25.0, 33.33, 60.0, 99.0, 100.0}) {
    PruneOutcome out = prune_to_reduction(m, sc, target, PruneMetric::Params);
    const double got = red_of(out);
    double best = 1e18;
    for (double r : reachable) best = std::min(best, std::fabs(r - target));
    EXPECT_LE(std::fabs(got - target), best + 1e-9) << "target " << target;
    EXPECT_GE(got, prev - 1e-12) << "reduction must grow with the target";
    prev = got;
  }

  // boundaries: zero wants the minimal outcome, 100 wants guards only
  EXPECT_EQ(prune_to_reduction(m, sc, 0.0, PruneMetric::Params).pruned_count, 0);
  PruneOutcome all = prune_to_reduction(m, sc, 100.0, PruneMetric::Params);
  for (const FilterMask& mk : all.masks) EXPECT_EQ(mk.live(), 1);

  EXPECT_THROW(prune_to_reduction(m, sc, -1.0, PruneMetric::Params), PolicyError);
  EXPECT_THROW(prune_to_reduction(m, sc, 101.0, PruneMetric::Params), PolicyError);
}

TEST(PruneToReduction, WorksOnTheFlopsMetric) {
  ModelState m = build_arch("tiny2", 1, 6, 6, 3);
  init_weights(m, 9);
  AttentionSummary sc = scores_of({{0.1, 0.5, 0.3, 0.05},
                                   {0.2, 0.9, 0.4, 0.05, 0.6, 0.3, 0.15, 0.7}});
  const Accounting base = total_accounting(m);
  PruneOutcome out = prune_to_reduction(m, sc, 50.0, PruneMetric::Flops);
  const double red = 100.0 * (1.0 - static_cast<double>(out.after.total_flops) /
                                        static_cast<double>(base.total_flops));
  EXPECT_GT(red, 0.0);
  EXPECT_LE(red, 100.0);
  PruneOutcome more = prune_to_reduction(m, sc, 90.0, PruneMetric::Flops);
  const double red_more =
      100.0 * (1.0 - static_cast<double>(more.after.total_flops) /
                         static_cast<double>(base.total_flops));
  EXPECT_GE(red_more, red - 1e-12);
}
