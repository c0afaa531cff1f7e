#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>
#include <set>

#include "support.hpp"
#include "turntake/dataset.hpp"
#include "turntake/extract.hpp"

using namespace turntake;
using namespace turntake::dataset;
using testsupport::make_conv;

namespace {

std::vector<DecisionPoint> points_with_counts(const std::array<std::size_t, 4>& counts, const std::string& tag = "p") {
  std::vector<DecisionPoint> out;
  for (auto cat : kAllCategories)
    for (std::size_t i = 0; i < counts[category_index(cat)]; ++i)
      out.emplace_back(tag + std::string(to_string(cat)) + std::to_string(i), "c", 1, "A", label_of(cat), cat);
  return out;
}

// Proportion error of an allocation: sum |q_i - target * c_i / total|.
double apportion_error(const std::vector<std::size_t>& q, const std::vector<std::size_t>& counts, std::size_t target) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  double e = 0;
  for (std::size_t i = 0; i < q.size(); ++i)
    e += std::abs(static_cast<double>(q[i]) - static_cast<double>(target) * counts[i] / static_cast<double>(total));
  return e;
}

}  // namespace

TEST(Dedup, IdenticalContextAndTarget) {
  std::vector<Conversation> convs = {make_conv("a", {{"A", "hello there"}, {"B", "hi you"}, {"A", "bye now"}}, {"C"}),
                                     make_conv("b", {{"A", "hello there"}, {"B", "hi you"}, {"C", "other end"}}, {"C"})};
  const auto pts = extract::extract_all(convs);
  ASSERT_EQ(pts.size(), 4u);
  const auto out = dedup(pts, ConversationIndex(convs));
  // Same history and current line for targets A and C in both conversations;
  // only the labels differ, which the key ignores.
  EXPECT_EQ(out.size(), 2u);
  for (const auto& p : out) EXPECT_EQ(p.conv_id(), "a");
}

TEST(Dedup, DifferentTargetsBothKept) {
  std::vector<Conversation> convs = {make_conv("a", {{"A", "hello there"}, {"B", "hi you"}, {"A", "bye now"}}, {"C"})};
  const auto pts = extract::extract_all(convs);
  EXPECT_EQ(dedup(pts, ConversationIndex(convs)).size(), 2u);
}

// O(n^2) oracle with planted duplicates.
TEST(Dedup, MatchesPairwiseOracle) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<Conversation> convs;
    for (int i = 0; i < 6; ++i) {
      convs.push_back(testsupport::random_conversation(rng, "c" + std::to_string(i), 3, 6, false));
      if (rng() % 2) {
        auto copy = convs.back();
        copy.conv_id += "dup";
        convs.push_back(copy);
      }
    }
    const ConversationIndex idx(convs);
    const auto pts = extract::extract_all(convs);
    auto same = [&](const DecisionPoint& a, const DecisionPoint& b) {
      const auto& ca = idx.resolve(a);
      const auto& cb = idx.resolve(b);
      if (a.target() != b.target() || a.boundary_t() != b.boundary_t()) return false;
      for (std::size_t i = 0; i <= a.boundary_t(); ++i)
        if (ca.speaker(ca.utterances[i].speaker).display_name != cb.speaker(cb.utterances[i].speaker).display_name ||
            ca.utterances[i].text != cb.utterances[i].text)
          return false;
      return true;
    };
    std::vector<std::string> expect;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      bool first = true;
      for (std::size_t j = 0; j < i && first; ++j) first = !same(pts[i], pts[j]);
      if (first) expect.push_back(pts[i].dp_id());
    }
    std::vector<std::string> got;
    for (const auto& p : dedup(pts, idx)) got.push_back(p.dp_id());
    EXPECT_EQ(got, expect);
  }
}

TEST(SplitSizes, Examples) {
  EXPECT_EQ(split_sizes(100, {}), (SplitSizes{80, 10, 10}));
  EXPECT_EQ(split_sizes(1598, {}), (SplitSizes{1280, 159, 159}));
  EXPECT_EQ(split_sizes(1, {}), (SplitSizes{1, 0, 0}));
  EXPECT_EQ(split_sizes(10, {}), (SplitSizes{8, 1, 1}));
  EXPECT_EQ(split_sizes(0, {}), (SplitSizes{0, 0, 0}));
}

TEST(SplitSpec, Validation) {
  SplitSpec s;
  s.train = 0.5;
  EXPECT_THROW(s.validate(), Error);
}

TEST(Split, PerCategoryLawAndDeterminism) {
  const auto pts = points_with_counts({37, 120, 5, 64});
  SplitSpec spec;
  spec.seed = 99;
  const auto a = split_per_category(pts, spec);
  const auto b = split_per_category(pts, spec);
  EXPECT_EQ(a, b);
  std::map<std::pair<Category, Split>, std::size_t> n;
  for (const auto& p : a) {
    ASSERT_TRUE(p.split());
    ++n[{p.category(), *p.split()}];
  }
  for (auto cat : kAllCategories) {
    const auto c = category_counts(pts)[category_index(cat)];
    EXPECT_EQ((n[{cat, Split::Val}]), c / 10);
    EXPECT_EQ((n[{cat, Split::Test}]), c / 10);
    EXPECT_EQ((n[{cat, Split::Train}]), c - 2 * (c / 10));
  }
  spec.seed = 100;
  EXPECT_NE(split_per_category(pts, spec), a);
}

TEST(Quotas, ExactProportions) {
  EXPECT_EQ(largest_remainder_quotas({400, 300, 200, 100}, 500), (std::vector<std::size_t>{200, 150, 100, 50}));
  EXPECT_EQ(largest_remainder_quotas({400, 300, 200, 100}, 1000), (std::vector<std::size_t>{400, 300, 200, 100}));
  EXPECT_THROW(largest_remainder_quotas({1, 1}, 3), Error);
}

TEST(Quotas, TieGoesToEarlierCategory) {
  EXPECT_EQ(largest_remainder_quotas({1, 1, 1, 1}, 2), (std::vector<std::size_t>{1, 1, 0, 0}));
}

// Exhaustive minimizer of proportion error over all feasible allocations.
TEST(Quotas, MatchExhaustiveMinimizer) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::size_t> counts(4);
    for (auto& c : counts) c = rng() % 9;
    std::size_t total = counts[0] + counts[1] + counts[2] + counts[3];
    if (total == 0) continue;
    const std::size_t target = rng() % (total + 1);
    double best = 1e300;
    for (std::size_t a = 0; a <= counts[0]; ++a)
      for (std::size_t b = 0; b <= counts[1]; ++b)
        for (std::size_t c = 0; c <= counts[2]; ++c) {
          if (a + b + c > target) continue;
          const std::size_t d = target - a - b - c;
          if (d > counts[3]) continue;
          best = std::min(best, apportion_error({a, b, c, d}, counts, target));
        }
    const auto q = largest_remainder_quotas(counts, target);
    EXPECT_EQ(q[0] + q[1] + q[2] + q[3], target);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_LE(q[i], counts[i]);
    EXPECT_NEAR(apportion_error(q, counts, target), best, 1e-9);
  }
}

TEST(Subsample, ProportionsAndIdentity) {
  const auto pts = points_with_counts({400, 300, 200, 100});
  const auto s = stratified_subsample(pts, 500, 1);
  EXPECT_EQ(category_counts(s), (std::array<std::size_t, 4>{200, 150, 100, 50}));
  EXPECT_EQ(stratified_subsample(pts, pts.size(), 1), pts);
  EXPECT_EQ(stratified_subsample(pts, 500, 1), s);
  try {
    stratified_subsample(pts, 1001, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "TargetTooLarge");
  }
}

TEST(Batches, EightPerCategory) {
  const auto pts = points_with_counts({40, 90, 33, 12});
  const auto plan = balanced_batches(pts, 32, 3, 2);
  EXPECT_EQ(plan.batches.size(), 2 * ((pts.size() + 31) / 32));
  std::map<std::string, Category> cat;
  for (const auto& p : pts) cat[p.dp_id()] = p.category();
  for (const auto& b : plan.batches) {
    ASSERT_EQ(b.size(), 32u);
    std::array<int, 4> n{};
    for (const auto& id : b) ++n[category_index(cat.at(id))];
    for (int x : n) EXPECT_EQ(x, 8);
  }
}

TEST(Batches, SmallCategoryRecycles) {
  const auto pts = points_with_counts({5, 100, 100, 100});
  const auto plan = balanced_batches_n(pts, 4, 8, 10);
  std::map<std::string, int> seen;
  for (const auto& b : plan.batches)
    for (const auto& id : b) ++seen[id];
  for (std::size_t i = 0; i < 5; ++i) EXPECT_GE(seen["pI1" + std::to_string(i)], 2);
}

TEST(Batches, Errors) {
  const auto pts = points_with_counts({5, 5, 5, 5});
  try {
    balanced_batches_n(pts, 6, 0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "IndivisibleBatchSize");
  }
  try {
    balanced_batches_n(points_with_counts({5, 5, 0, 5}), 8, 0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "MissingCategory");
  }
}

TEST(Batches, SeededDeterminism) {
  const auto pts = points_with_counts({20, 20, 20, 20});
  EXPECT_EQ(balanced_batches(pts, 8, 5, 1).batches, balanced_batches(pts, 8, 5, 1).batches);
  EXPECT_NE(balanced_batches(pts, 8, 5, 1).batches, balanced_batches(pts, 8, 6, 1).batches);
}

TEST(Sft, DecisionOnlyAndReasoning) {
  const auto conv = make_conv("c", {{"A", "first turn"}, {"B", "second turn"}, {"A", "third turn"}}, {"C"});
  std::vector<Conversation> convs = {conv};
  const ConversationIndex idx(convs);
  const DecisionPoint silent("s", "c", 1, "C", Decision::Silent, Category::S1);
  const DecisionPoint speak("k", "c", 1, "A", Decision::Speak, Category::I2);

  const auto ex = export_sft({silent}, idx, {});
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].completion, "<decision>SILENT</decision>");
  EXPECT_EQ(ex[0].prompt, prompting::render(silent, conv, {}).prompt_text());

  prompting::PromptConfig rcfg;
  rcfg.mode = prompting::Mode::ReasoningWithDecision;
  const ReasoningLookup traces = {{"k", "A was talking with B and the floor returns to A."}};
  const auto rex = export_sft({speak}, idx, rcfg, &traces);
  EXPECT_EQ(rex[0].completion,
            "<reasoning>A was talking with B and the floor returns to A.</reasoning>\n<decision>SPEAK</decision>");
  EXPECT_LT(rex[0].completion.find("<reasoning>"), rex[0].completion.find("<decision>"));
  try {
    export_sft({speak, silent}, idx, rcfg, &traces);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "MissingReasoning");
  }
}
