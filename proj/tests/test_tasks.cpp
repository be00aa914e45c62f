#include <gtest/gtest.h>

#include <set>

#include "prefixlab/harness.hpp"

using namespace prefixlab;

TEST(Tasks, OraclesOnHandExamples) {
  const SyntheticTask recall = SyntheticTask::make(TaskKind::keyed_recall);
  EXPECT_EQ(recall.solve({16, 17, 0}), (std::vector<int>{13, 24}));
  const SyntheticTask add = SyntheticTask::make(TaskKind::modular_add);
  EXPECT_EQ(add.solve({7, 11, 9, 12}), (std::vector<int>{5, 13}));
  const SyntheticTask rev = SyntheticTask::make(TaskKind::copy_reverse);
  EXPECT_EQ(rev.solve({1, 2, 3, 4, 8}), (std::vector<int>{4, 3, 2, 1, 9}));
  EXPECT_THROW(recall.solve({1, 2}), std::invalid_argument);
}

TEST(Tasks, RecallTableIsAPermutation) {
  std::set<int> vals;
  for (int k = 0; k < SyntheticTask::kKeys; ++k) vals.insert(SyntheticTask::recall_value(k));
  EXPECT_EQ(vals.size(), 8u);
  EXPECT_EQ(*vals.begin(), 8);
  EXPECT_EQ(*vals.rbegin(), 15);
}

TEST(Tasks, SplitsAreDisjointCompleteAndSeeded) {
  for (TaskKind k : {TaskKind::keyed_recall, TaskKind::modular_add, TaskKind::copy_reverse}) {
    const SyntheticTask t = SyntheticTask::make(k);
    const Dataset d = t.sample(5);
    std::set<std::vector<int>> seen;
    for (const auto* split : {&d.train, &d.val, &d.test}) {
      for (const auto& e : *split) {
        EXPECT_TRUE(seen.insert(e.prompt).second) << t.name();
        EXPECT_EQ(e.answer, t.solve(e.prompt));
        EXPECT_EQ(e.answer.back(), t.stop);
        for (int tok : e.full()) EXPECT_LT(static_cast<std::size_t>(tok), t.vocab);
      }
    }
    EXPECT_EQ(seen.size(), t.universe().size());
    EXPECT_NEAR(static_cast<double>(d.train.size()) / seen.size(), 0.70, 0.01);
    EXPECT_EQ(t.sample(5).test, d.test);
    EXPECT_NE(t.sample(6).test, d.test);
  }
}

TEST(Tasks, ParseRoundTrip) {
  for (TaskKind k : {TaskKind::keyed_recall, TaskKind::modular_add, TaskKind::copy_reverse, TaskKind::rank1_classify}) {
    EXPECT_EQ(parse_task(to_string(k)), k);
  }
  EXPECT_THROW(parse_task("sorting"), std::invalid_argument);
  EXPECT_THROW(SyntheticTask::make(TaskKind::rank1_classify), std::invalid_argument);
}

TEST(Rank1, LabelsFollowSignOfCoefficient) {
  const Rank1Task t = Rank1Task::make(2, 20);
  EXPECT_EQ(t.data.train.size(), 14u);
  EXPECT_EQ(t.data.val.size(), 3u);
  EXPECT_EQ(t.data.test.size(), 3u);
  for (const auto& c : t.data.train) {
    EXPECT_EQ(numerical_rank(c.x), 1u);
    for (std::size_t i = 0; i < c.x.rows(); ++i) {
      const double a = matmul(row_block(c.x, i, 1), transpose(t.base.u))(0, 0);
      EXPECT_EQ(c.labels[i], a > 0 ? 0 : 1);
      EXPECT_EQ(row_block(c.target, i, 1), a > 0 ? t.base.e1 : t.base.e2);
    }
  }
}
