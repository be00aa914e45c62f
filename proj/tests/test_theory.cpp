#include <gtest/gtest.h>

#include "prefixlab/theory.hpp"

using namespace prefixlab;

TEST(Caps, HandPickedCells) {
  // LoRA capped by its carrier: t_X = 1 even with r = 5.
  auto c = expressivity_caps(1, 5, 3, 4);
  EXPECT_EQ(c.d_lora, 1u);
  EXPECT_EQ(c.d_pt, 3u);
  EXPECT_EQ(c.relation, CapsRelation::lora_subset_pt);
  // No headroom: both zero.
  c = expressivity_caps(4, 4, 4, 0);
  EXPECT_EQ(c.relation, CapsRelation::equal);
  EXPECT_EQ(c.d_pt, 0u);
  // Rich context and high rank beat a short prefix.
  c = expressivity_caps(6, 5, 2, 6);
  EXPECT_EQ(c.relation, CapsRelation::pt_subset_lora);
  // QK-only LoRA (r = 0) reaches nothing new.
  EXPECT_EQ(expressivity_caps(6, 0, 1, 6).d_lora, 0u);
}

TEST(Caps, InclusionRuleOnFullGrid) {
  for (std::size_t t = 0; t <= 6; ++t)
    for (std::size_t r = 0; r <= 6; ++r)
      for (std::size_t m = 0; m <= 6; ++m)
        for (std::size_t nu = 0; nu <= 6; ++nu) {
          const CapsReport c = expressivity_caps(t, r, m, nu);
          const std::size_t dl = std::min({t, r, nu}), dp = std::min(m, nu);
          ASSERT_EQ(c.d_lora, dl);
          ASSERT_EQ(c.d_pt, dp);
          const CapsRelation expect =
              dl < dp ? CapsRelation::lora_subset_pt : (dl > dp ? CapsRelation::pt_subset_lora : CapsRelation::equal);
          ASSERT_EQ(c.relation, expect);
        }
}

TEST(Novelty, SettingQuantities) {
  Rng rng(1);
  const NoveltySetting s = random_setting(rng, 5, 8, 3, 2);
  EXPECT_EQ(s.t_x, 3u);
  EXPECT_EQ(s.s_x.dim(), 2u);
  EXPECT_EQ(s.nu_x, 6u);
  EXPECT_THROW(random_setting(rng, 2, 8, 3, 1), std::invalid_argument);
}

TEST(Novelty, ConstructedDeltaRealizesU) {
  Rng rng(2);
  for (int i = 0; i < 30; ++i) {
    const auto c = random_realizability_case(rng, 4 + i % 9, true);
    ASSERT_TRUE(lora_realizable(c.setting, c.u, c.r));
    const Matrix delta = construct_lora_delta(c.setting, c.u, c.r);
    EXPECT_LE(principal_angle_distance(novelty_subspace(c.setting, delta), c.u), 1e-8);
    EXPECT_LE(numerical_rank(delta), c.r);
  }
}

TEST(Novelty, InfeasibleTargetsRejected) {
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    const auto c = random_realizability_case(rng, 6 + i % 5, false);
    EXPECT_FALSE(lora_realizable(c.setting, c.u, c.r));
    EXPECT_THROW(construct_lora_delta(c.setting, c.u, c.r), std::invalid_argument);
    EXPECT_LE(brute_force_max_novelty(c.setting, NoveltyMethod::lora(c.r), 1000, rng),
              std::min(c.setting.t_x, c.r));
  }
}

TEST(Novelty, UMustBeOrthogonalToContext) {
  Rng rng(4);
  const NoveltySetting s = random_setting(rng, 4, 6, 3, 2);
  EXPECT_THROW(lora_realizable(s, s.s_x, 3), std::invalid_argument);
  EXPECT_THROW(construct_lora_delta(s, random_subspace(rng, 5, 1), 3), ShapeError);
}

TEST(Novelty, PrefixValuesRealizeAnyUUpToM) {
  Rng rng(5);
  const NoveltySetting s = random_setting(rng, 4, 8, 2, 2);
  const Subspace u = random_subspace_within(rng, orthogonal_complement(s.s_x), 4);
  const Matrix p = construct_prefix_values(u, 5);
  EXPECT_EQ(p.rows(), 5u);
  EXPECT_LE(principal_angle_distance(span_of_rows(matmul(p, s.pi_x)), u), 1e-10);
  EXPECT_THROW(construct_prefix_values(u, 3), std::invalid_argument);
}

TEST(Novelty, BruteForceGuards) {
  Rng rng(6);
  const NoveltySetting big = random_setting(rng, 4, 13, 2, 1);
  EXPECT_THROW(brute_force_max_novelty(big, NoveltyMethod::lora(1), 1000, rng), std::invalid_argument);
  const NoveltySetting s = random_setting(rng, 4, 6, 2, 1);
  EXPECT_THROW(brute_force_max_novelty(s, NoveltyMethod::lora(1), 10, rng), std::invalid_argument);
  EXPECT_EQ(brute_force_max_novelty(s, NoveltyMethod::prefix(0), 1000, rng), 0u);
  EXPECT_EQ(brute_force_max_novelty(s, NoveltyMethod::prefix(3), 1000, rng), 3u);
}

TEST(Novelty, OracleAgreesWithCapsWhenNoHeadroom) {
  Rng rng(7);
  const auto s = setting_for_cell(rng, 4, 0);
  ASSERT_TRUE(s.has_value());
  EXPECT_EQ(brute_force_max_novelty(*s, NoveltyMethod::lora(3), 1000, rng), 0u);
  EXPECT_EQ(brute_force_max_novelty(*s, NoveltyMethod::prefix(3), 1000, rng), 0u);
  EXPECT_FALSE(setting_for_cell(rng, 0, 0).has_value());
}

TEST(QkLock, PerturbationsStayInContextSpan) {
  Rng rng(8);
  ModelConfig c = ModelConfig::attention_only(6);
  c.weight_std = 1.0;
  const Model layer = Model::random(c, 1);
  const Matrix x = matmul(rng.normal_matrix(5, 2), rng.normal_matrix(2, 6));
  EXPECT_LE(qk_lock_check(layer, x, 100, 2), 1e-6);
  const auto v = qk_lock_residuals(layer, x, 100, 3, PerturbTarget::value);
  EXPECT_GE(std::count_if(v.begin(), v.end(), [](double r) { return r > 0.05; }), 95);
}

TEST(QkLock, RejectsMultiLayerModels) {
  const Model m = Model::random(ModelConfig::attention_only(4, 2), 0);
  EXPECT_THROW(qk_lock_check(m, Matrix(2, 4, 1.0), 3, 0), std::invalid_argument);
}

TEST(ContextRank, GrowsOnlyWithNewDirections) {
  const Matrix x{{1, 0, 0}};
  const Matrix appended{{2, 0, 0}, {0, 1, 0}, {1, 1, 0}, {0, 0, 1}};
  EXPECT_EQ(context_rank_probe(x, appended), (std::vector<std::size_t>{1, 1, 2, 2, 3}));
}

TEST(LossHierarchy, EckartYoungFloorOfKnownTarget) {
  // Four rows of e1 and four of e2: singular values 2, 2.
  Matrix y(8, 4);
  for (std::size_t i = 0; i < 8; ++i) y(i, i < 4 ? 0 : 1) = 1.0;
  EXPECT_NEAR(eckart_young_floor(y), 2.0, 1e-12);
}

TEST(LossHierarchy, ProblemTargetsAreOrthonormalAndNovel) {
  LossHierarchyConfig cfg;
  cfg.seed = 3;
  const LossHierarchyProblem p = make_loss_hierarchy_problem(cfg);
  EXPECT_NEAR(frobenius_norm(p.e1), 1.0, 1e-12);
  EXPECT_NEAR(frobenius_norm(p.e2), 1.0, 1e-12);
  EXPECT_NEAR(matmul(p.e1, transpose(p.e2))(0, 0), 0.0, 1e-12);
  const Matrix xv = matmul(p.x, p.layer.layers[0].wv);
  EXPECT_LE(frobenius_norm(matmul(xv, transpose(p.e1))), 1e-10 * frobenius_norm(xv));
  EXPECT_EQ(numerical_rank(p.x), 1u);
}

TEST(LossHierarchy, SingleSeedOrdering) {
  LossHierarchyConfig cfg;
  cfg.seed = 1;
  const LossHierarchyResult r = loss_hierarchy_experiment(cfg);
  EXPECT_GE(r.qk.final_loss, 4.0 - 1e-6);
  EXPECT_GE(r.qkv.final_loss, 2.0 - 1e-6);
  EXPECT_NEAR(r.qkv_floor_svd, 2.0, 1e-9);
  EXPECT_LE(r.pt.final_loss, 1e-2);
  EXPECT_LE(r.analytic_pt_loss, 1e-4);
  EXPECT_EQ(r.pt_start_losses.size(), cfg.pt_starts);
  EXPECT_TRUE(r.holds());
}

TEST(LossHierarchy, AnalyticLossShrinksWithTau) {
  LossHierarchyConfig cfg;
  cfg.seed = 4;
  const LossHierarchyProblem p = make_loss_hierarchy_problem(cfg);
  EXPECT_GT(analytic_prefix_loss(p, 1.0), analytic_prefix_loss(p, 10.0));
  EXPECT_GT(analytic_prefix_loss(p, 10.0), analytic_prefix_loss(p, 50.0));
}
