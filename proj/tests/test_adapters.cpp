#include <gtest/gtest.h>

#include "prefixlab/adapters.hpp"
#include "prefixlab/decoding.hpp"

using namespace prefixlab;

namespace {

Model lm(std::uint64_t seed) { return Model::random(ModelConfig::transformer(13, 16, 2, 2, 32, true), seed); }

/// Hidden states of `ids` under the tape-bound adapter (training path).
Matrix trained_path(const Model& m, Adapter& a, const std::vector<int>& ids) {
  Tape t(false);
  const AdaptedBinding b = bind_adapter(t, m, a);
  const Var h0 = embed(b.model, ids, positions_for(ids.size(), {}, b.position_offset));
  return adapted_hidden(b, h0).value();
}

double grad_check_adapter(const Model& m, Adapter& a, const std::vector<int>& ids, std::uint64_t seed) {
  std::vector<Param*> ps = parameters(a);
  std::vector<int> targets(ids.begin() + 1, ids.end());
  targets.push_back(0);
  GradCheckOptions o;
  o.seed = seed;
  o.max_coords_per_param = 8;
  return grad_check(
      [&](Tape& t) {
        const AdaptedBinding b = bind_adapter(t, m, a);
        const Var h0 = embed(b.model, ids, positions_for(ids.size(), {}, b.position_offset));
        return cross_entropy_rows(logits(b.model, adapted_hidden(b, h0)), targets);
      },
      ps, o);
}

}  // namespace

TEST(Prefix, ZeroLengthRejected) {
  EXPECT_THROW(PrefixAdapter(2, 0, 8), std::invalid_argument);
  EXPECT_THROW(PromptAdapter::random(0, 8, 0), std::invalid_argument);
  EXPECT_THROW(LoRAAdapter::init(lm(0), LoraTargets::qk, 0, 0), std::invalid_argument);
}

TEST(Prefix, DeployedCountIsTwoLmd) {
  const Model m = lm(1);
  const Adapter direct = init_prefix(m, PrefixInit{InitMode::random, 5, 0, false});
  const Adapter reparam = init_prefix(m, PrefixInit{InitMode::random, 5, 0, true});
  EXPECT_EQ(deployed_param_count(direct), 2u * 2 * 5 * 16);
  EXPECT_EQ(deployed_param_count(reparam), 2u * 2 * 5 * 16);
  EXPECT_EQ(kind_name(reparam), "prefix_reparam");
}

TEST(Prefix, RandomInitScale) {
  const PrefixAdapter p = init_prefix(lm(2), PrefixInit{InitMode::random, 64, 3, false});
  double s = 0.0;
  for (double v : p.keys(0).value.data()) s += v * v;
  EXPECT_NEAR(std::sqrt(s / (64 * 16)), kPrefixInitStd, 0.002);
}

TEST(Prefix, ReparamMaterializesToSameBlock) {
  const Model m = lm(3);
  const PrefixAdapter p = init_prefix(m, PrefixInit{InitMode::random, 4, 9, true});
  const PrefixAdapter mat = p.materialize();
  EXPECT_FALSE(mat.reparameterized());
  EXPECT_EQ(p.block(), mat.block());
  Adapter a = p, b = mat;
  const std::vector<int> ids{1, 2, 3};
  EXPECT_EQ(trained_path(m, a, ids), trained_path(m, b, ids));
}

TEST(Prefix, ReparamOnlyWithRandomInit) {
  const std::vector<std::vector<int>> demos{{1, 2, 3}};
  EXPECT_THROW(init_prefix(lm(4), PrefixInit{InitMode::from_demo_cache, 2, 0, true}, demos), std::invalid_argument);
}

TEST(Prefix, DemoCacheInitEqualsIcl) {
  const Model m = lm(5);
  const std::vector<int> demo{1, 2, 3, 4, 5, 6};
  const std::vector<std::vector<int>> demos{demo};
  Adapter a = init_prefix(m, PrefixInit{InitMode::from_demo_cache, demo.size(), 0, false}, demos);
  const std::vector<int> query{7, 8};
  std::vector<int> joint = demo;
  joint.insert(joint.end(), query.begin(), query.end());
  const Matrix icl = row_block(run_tokens(m, joint).hidden, demo.size(), query.size());
  EXPECT_LE(max_abs_diff(trained_path(m, a, query), icl), 1e-10);
  EXPECT_LE(max_abs_diff(deploy(m, a).forward(query).hidden, icl), 1e-10);
}

TEST(Prefix, LongCacheKeepsFirstRowsShortCachePads) {
  const Model m = lm(6);
  const std::vector<std::vector<int>> demos{{1, 2, 3, 4, 5, 6}};
  const KVCache cache = build_demo_cache(m, demos[0]);
  const PrefixAdapter cut = init_prefix(m, PrefixInit{InitMode::from_demo_cache, 4, 0, false}, demos);
  EXPECT_EQ(cut.keys(1).value, row_block(cache.keys[1], 0, 4));
  EXPECT_EQ(cut.position_offset(), 4u);
  const PrefixAdapter pad = init_prefix(m, PrefixInit{InitMode::from_demo_cache, 9, 0, false}, demos);
  EXPECT_EQ(row_block(pad.values(0).value, 0, 6), cache.values[0]);
  EXPECT_EQ(frobenius_norm(row_block(pad.values(0).value, 6, 3)), 0.0);
  EXPECT_EQ(pad.position_offset(), 6u);
}

TEST(Prefix, TextDemoInitIsSeeded) {
  const Model m = lm(7);
  const std::vector<std::vector<int>> pool{{1, 2}, {3, 4, 5}, {6}, {7, 8, 9, 10}};
  const PrefixAdapter a = init_prefix(m, PrefixInit{InitMode::from_text_demos, 6, 42, false}, pool);
  const PrefixAdapter b = init_prefix(m, PrefixInit{InitMode::from_text_demos, 6, 42, false}, pool);
  EXPECT_EQ(a.block(), b.block());
  EXPECT_EQ(a.init_mode(), InitMode::from_text_demos);
  EXPECT_THROW(init_prefix(m, PrefixInit{InitMode::from_text_demos, 6, 0, false}), std::invalid_argument);
}

TEST(Lora, StartsEqualToBaseAndMergesExactly) {
  const Model m = lm(8);
  Adapter a = LoRAAdapter::init(m, LoraTargets::qkv, 2, 1);
  const std::vector<int> ids{1, 5, 9};
  EXPECT_EQ(trained_path(m, a, ids), run_tokens(m, ids).hidden);
  Rng rng(2);
  for (Param* p : parameters(a)) p->value = rng.normal_matrix(p->value.rows(), p->value.cols(), 0.3);
  EXPECT_LE(max_abs_diff(trained_path(m, a, ids), deploy(m, a).forward(ids).hidden), 1e-12);
  EXPECT_NE(checksum(deploy(m, a).model), checksum(m));
}

TEST(Lora, DeployedCountPerTarget) {
  const Model m = lm(9);
  EXPECT_EQ(deployed_param_count(LoRAAdapter::init(m, LoraTargets::qk, 3, 0)), 2u * 2 * 3 * 2 * 16);
  EXPECT_EQ(deployed_param_count(LoRAAdapter::init(m, LoraTargets::qkv, 3, 0)), 2u * 3 * 3 * 2 * 16);
}

TEST(Prompt, DeployedPrefixMatchesTrainingPath) {
  const Model m = lm(10);
  Adapter a = PromptAdapter::random(3, 16, 4);
  std::get<PromptAdapter>(a).embeddings.value = Rng(5).normal_matrix(3, 16);
  const std::vector<int> ids{2, 4, 6, 8};
  EXPECT_LE(max_abs_diff(trained_path(m, a, ids), deploy(m, a).forward(ids).hidden), 1e-10);
  EXPECT_EQ(deployed_param_count(a), 3u * 16);
}

TEST(FullFt, StartsEqualToBaseAndCountsEverything) {
  const Model m = lm(11);
  Adapter a = FullFTAdapter::from(m);
  EXPECT_EQ(deployed_param_count(a), m.parameter_count());
  EXPECT_EQ(deploy(m, a).model, m);
}

TEST(Adapters, TrainingNeverTouchesBase) {
  const Model m = lm(12);
  const auto before = checksum(m);
  for (Adapter a : {Adapter(init_prefix(m, PrefixInit{})), Adapter(PromptAdapter::random(2, 16, 0)),
                    Adapter(LoRAAdapter::init(m, LoraTargets::qkv, 2, 0)), Adapter(FullFTAdapter::from(m))}) {
    std::vector<Param*> ps = parameters(a);
    Adam opt(ps);
    for (int step = 0; step < 3; ++step) {
      zero_grads(ps);
      Tape t;
      const AdaptedBinding b = bind_adapter(t, m, a);
      const std::vector<int> ids{1, 2, 3};
      const Var loss = cross_entropy_rows(logits(b.model, adapted_hidden(b, embed(b.model, ids, {0, 1, 2}))), {2, 3, 4});
      t.backward(loss);
      opt.step(1e-2);
    }
    EXPECT_EQ(checksum(m), before) << kind_name(a);
  }
}

TEST(Adapters, CompositeGradientsMatchFiniteDifferences) {
  const Model m = lm(13);
  const std::vector<int> ids{3, 1, 4, 1};
  std::vector<Adapter> all{init_prefix(m, PrefixInit{InitMode::random, 3, 1, false}),
                           init_prefix(m, PrefixInit{InitMode::random, 3, 1, true}), PromptAdapter::random(2, 16, 1),
                           LoRAAdapter::init(m, LoraTargets::qk, 2, 1), LoRAAdapter::init(m, LoraTargets::qkv, 2, 1),
                           FullFTAdapter::from(m)};
  for (Adapter& a : all) {
    // Move LoRA off B = 0 so every factor has a nonzero gradient path.
    if (auto* l = std::get_if<LoRAAdapter>(&a)) {
      Rng rng(3);
      for (Param* p : l->parameters()) p->value = rng.normal_matrix(p->value.rows(), p->value.cols(), 0.2);
    }
    EXPECT_LE(grad_check_adapter(m, a, ids, 7), 1e-5) << kind_name(a);
  }
}

TEST(Adapters, DeployLeavesBaseUntouched) {
  const Model m = lm(14);
  const Model copy = m;
  Adapter a = LoRAAdapter::init(m, LoraTargets::qkv, 1, 0);
  for (Param* p : parameters(a)) p->value = Matrix(p->value.rows(), p->value.cols(), 0.1);
  (void)deploy(m, a);
  EXPECT_EQ(m, copy);
}
