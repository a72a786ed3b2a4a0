#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "prunekit/ablate.hpp"

using namespace prunekit;

namespace {

RunConfig micro_cfg() {
  RunConfig c;
  c.arch = "tiny2";
  c.dataset.source = DataSource::SyntheticBlobs;
  c.dataset.train_size = 32;
  c.dataset.test_size = 16;
  c.dataset.classes = 4;
  c.dataset.channels = 2;
  c.dataset.height = 8;
  c.dataset.width = 8;
  c.dataset.augment_crop = false;
  c.dataset.augment_flip = false;
  c.dataset.noise_sigma = 0.2;
  c.total_epochs = 4;
  c.batch_size = 8;
  c.sgd.lr_schedule = {{0, 0.05}};
  c.policy.kind = PolicyKind::AccuracyGuaranteed;
  c.policy.target = 50.0;
  c.attention.calibration_batches = 4;
  c.seed = 42;
  c.max_rounds = 10;
  return c;
}

}  // namespace

TEST(AttentionSweep, EmitsTheSixMethodsInFixedOrder) {
  const std::vector<AblationRow> rows = attention_function_sweep(micro_cfg(), 30.0);
  ASSERT_EQ(rows.size(), 6u);
  const char* expected[] = {"mean_p1", "mean_p2", "mean_p4",
                            "sum_p1",  "max_p1",  "l1_norm"};
  for (int i = 0; i < 6; ++i) {
    EXPECT_EQ(rows[i].method, expected[i]);
    EXPECT_GT(rows[i].params_red_pct, 0.0) << rows[i].method;
    EXPECT_LT(rows[i].params_red_pct, 100.0) << rows[i].method;
    EXPECT_TRUE(std::isfinite(rows[i].acc)) << rows[i].method;
    EXPECT_TRUE(std::isfinite(rows[i].acc_loss)) << rows[i].method;
  }
}

TEST(AttentionSweep, ArmsLandOnTheSameMatchedReduction) {
  // Every method targets the same reduction via the closest-achievable rule.
  // On tiny2 the achievable grid is coarse but identical across methods, so
  // all arms must land on the same level.
  const std::vector<AblationRow> rows = attention_function_sweep(micro_cfg(), 25.0);
  ASSERT_EQ(rows.size(), 6u);
  for (int i = 1; i < 6; ++i)
    EXPECT_DOUBLE_EQ(rows[i].params_red_pct, rows[0].params_red_pct) << rows[i].method;
}

TEST(AttentionSweep, IsDeterministicAcrossCalls) {
  const std::vector<AblationRow> a = attention_function_sweep(micro_cfg(), 30.0);
  const std::vector<AblationRow> b = attention_function_sweep(micro_cfg(), 30.0);
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].method, b[i].method);
    EXPECT_EQ(a[i].acc, b[i].acc);
    EXPECT_EQ(a[i].params_red_pct, b[i].params_red_pct);
  }
}

TEST(Oneshot, UsesTheConfiguredAttentionFunction) {
  RunConfig cfg = micro_cfg();
  cfg.attention.function = AttentionFn::Max;
  cfg.attention.p = 1.0;
  const AblationRow row = oneshot_prune(cfg, 30.0);
  EXPECT_EQ(row.method, "max_p1");
  EXPECT_GT(row.params_red_pct, 0.0);
}

TEST(FixedRate, FullRateLeavesOnlyGuardFiltersInOneRound) {
  const FixedRateResult res = fixed_rate_prune(micro_cfg(), 100.0, /*by_attention=*/false);
  ASSERT_EQ(res.rows.size(), 1u);
  // tiny2 has 4 and 8 filters; everything except one guard per layer goes.
  EXPECT_EQ(res.rows[0].pruned, (4 - 1) + (8 - 1));
  for (const FilterMask& mask : res.final_model.masks) EXPECT_EQ(mask.live(), 1);
}

TEST(FixedRate, ReductionGrowsEveryRoundUntilGuardsRemain) {
  RunConfig cfg = micro_cfg();
  cfg.max_rounds = 50;
  const FixedRateResult res = fixed_rate_prune(cfg, 25.0, /*by_attention=*/true);
  ASSERT_GE(res.rows.size(), 2u);
  double prev = 0.0;
  for (const FixedRateRow& row : res.rows) {
    EXPECT_GT(row.params_red_pct, prev) << "round " << row.round;
    EXPECT_GT(row.pruned, 0);
    prev = row.params_red_pct;
  }
  // With the budget this generous the loop only stops once guards remain.
  for (const FilterMask& mask : res.final_model.masks) EXPECT_EQ(mask.live(), 1);
}

TEST(FixedRate, StopsOnceTheTargetReductionIsReached) {
  RunConfig cfg = micro_cfg();
  cfg.max_rounds = 50;
  const FixedRateResult full = fixed_rate_prune(cfg, 25.0, true);
  const FixedRateResult capped = fixed_rate_prune(cfg, 25.0, true, 20.0);
  ASSERT_FALSE(capped.rows.empty());
  EXPECT_GE(capped.rows.back().params_red_pct, 20.0);
  EXPECT_LE(capped.rows.size(), full.rows.size());
  // The capped run is a prefix of the uncapped one.
  for (size_t i = 0; i < capped.rows.size(); ++i)
    EXPECT_EQ(capped.rows[i].params_red_pct, full.rows[i].params_red_pct);
}

TEST(FixedRate, RejectsOutOfRangeRates) {
  EXPECT_THROW(fixed_rate_prune(micro_cfg(), 0.0, true), PolicyError);
  EXPECT_THROW(fixed_rate_prune(micro_cfg(), -5.0, true), PolicyError);
  EXPECT_THROW(fixed_rate_prune(micro_cfg(), 100.5, true), PolicyError);
}

TEST(AblationCsv, WritersProduceTheDocumentedColumns) {
  std::vector<AblationRow> rows(1);
  rows[0].method = "mean_p2";
  rows[0].acc = 81.25;
  rows[0].acc_loss = 2.5;
  rows[0].params_red_pct = 33.125;
  rows[0].flops_red_pct = 41.0;
  std::ostringstream ab;
  write_ablation_csv(ab, rows);
  EXPECT_EQ(ab.str(),
            "method,acc,acc_loss,params_red_pct,flops_red_pct\n"
            "mean_p2,81.25,2.5,33.125,41\n");

  std::vector<FixedRateRow> frows(1);
  frows[0].round = 3;
  frows[0].acc = 75.0;
  frows[0].acc_loss = 5.0;
  frows[0].params_red_pct = 50.5;
  frows[0].flops_red_pct = 60.0;
  frows[0].pruned = 2;
  std::ostringstream fr;
  write_fixed_rate_csv(fr, frows);
  EXPECT_EQ(fr.str(),
            "round,acc,acc_loss,params_red_pct,flops_red_pct,pruned\n"
            "3,75,5,50.5,60,2\n");
}
