#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "turntake/core.hpp"
#include "turntake/prompting.hpp"
#include "turntake/random.hpp"

namespace turntake::dataset {

// Exact-duplicate key: full rendered history before the boundary, the
// current turn, and the target.
inline std::string dedup_key(const DecisionPoint& dp, const Conversation& conv) {
  std::string key;
  for (std::size_t i = 0; i < dp.boundary_t(); ++i) {
    key += prompting::render_line(conv, conv.utterances[i]);
    key += '\n';
  }
  key += '\x1e';
  key += prompting::render_line(conv, conv.utterances[dp.boundary_t()]);
  key += '\x1e';
  key += dp.target();
  return key;
}

// Keeps the first point for each dedup key, preserving order.
inline std::vector<DecisionPoint> dedup(const std::vector<DecisionPoint>& points, const ConversationIndex& convs) {
  std::unordered_set<std::string> seen;
  std::vector<DecisionPoint> out;
  for (const auto& dp : points)
    if (seen.insert(dedup_key(dp, convs.resolve(dp))).second) out.push_back(dp);
  return out;
}

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    for (double r : {train, val, test})
      if (!(r >= 0.0 && r <= 1.0)) throw Error("SchemaViolation", "split ratios must lie in [0,1]", {{"field", "ratios"}});
    if (std::abs(train + val + test - 1.0) > 1e-9)
      throw Error("SchemaViolation", "split ratios must sum to 1", {{"field", "ratios"}});
  }
};

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  bool operator==(const SplitSizes&) const = default;
};

// val = floor(val_ratio * n), test = floor(test_ratio * n), train = rest.
inline SplitSizes split_sizes(std::size_t n, const SplitSpec& spec) {
  const auto floor_of = [n](double r) { return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9)); };
  SplitSizes s;
  s.val = floor_of(spec.val);
  s.test = floor_of(spec.test);
  s.train = n - s.val - s.test;
  return s;
}

// Within each category: seeded shuffle, then val, test, and train in that
// order. Output keeps the input order of points.
inline std::vector<DecisionPoint> split_per_category(const std::vector<DecisionPoint>& points, const SplitSpec& spec) {
  spec.validate();
  std::vector<std::optional<Split>> assigned(points.size());
  for (auto cat : kAllCategories) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < points.size(); ++i)
      if (points[i].category() == cat) idx.push_back(i);
    auto rng = derive_rng(spec.seed, category_index(cat));
    fisher_yates(std::span<std::size_t>(idx), rng);
    const auto sizes = split_sizes(idx.size(), spec);
    for (std::size_t j = 0; j < idx.size(); ++j)
      assigned[idx[j]] = j < sizes.val ? Split::Val : (j < sizes.val + sizes.test ? Split::Test : Split::Train);
  }
  std::vector<DecisionPoint> out;
  out.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out.push_back(points[i].with_split(assigned[i]));
  return out;
}

// Largest-remainder apportionment of `target` over `counts`; ties on the
// remainder go to the earlier index. Sum of result is exactly `target`.
inline std::vector<std::size_t> largest_remainder_quotas(const std::vector<std::size_t>& counts, std::size_t target) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  if (target > total)
    throw Error("TargetTooLarge", "target_n " + std::to_string(target) + " exceeds " + std::to_string(total) + " points",
                {{"target_n", target}, {"available", total}});
  std::vector<std::size_t> q(counts.size(), 0);
  if (total == 0) return q;
  std::vector<std::pair<std::uint64_t, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const auto prod = static_cast<unsigned __int128>(target) * counts[i];
    q[i] = static_cast<std::size_t>(prod / total);
    rem.emplace_back(static_cast<std::uint64_t>(prod % total), i);
    assigned += q[i];
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < target; ++k, ++assigned) ++q[rem[k].second];
  return q;
}

inline std::array<std::size_t, 4> category_counts(const std::vector<DecisionPoint>& points) {
  std::array<std::size_t, 4> c{};
  for (const auto& p : points) ++c[category_index(p.category())];
  return c;
}

// Per-category quotas proportional to category shares (which also fixes the
// class shares), sampled uniformly without replacement. Input order is kept.
inline std::vector<DecisionPoint> stratified_subsample(const std::vector<DecisionPoint>& points, std::size_t target_n,
                                                       std::uint64_t seed) {
  const auto counts = category_counts(points);
  const auto quotas = largest_remainder_quotas({counts.begin(), counts.end()}, target_n);
  std::vector<bool> keep(points.size(), false);
  for (auto cat : kAllCategories) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < points.size(); ++i)
      if (points[i].category() == cat) idx.push_back(i);
    auto rng = derive_rng(seed, category_index(cat));
    fisher_yates(std::span<std::size_t>(idx), rng);
    for (std::size_t j = 0; j < quotas[category_index(cat)]; ++j) keep[idx[j]] = true;
  }
  std::vector<DecisionPoint> out;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (keep[i]) out.push_back(points[i]);
  return out;
}

struct BatchPlan {
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::string>> batches;  // dp_ids
};

// Every batch takes batch_size/4 points from each category. A category pool
// is consumed in shuffled order and reshuffled when exhausted, so smaller
// categories repeat.
inline BatchPlan balanced_batches_n(const std::vector<DecisionPoint>& points, std::size_t batch_size, std::uint64_t seed,
                                    std::size_t num_batches) {
  if (batch_size == 0 || batch_size % 4 != 0)
    throw Error("IndivisibleBatchSize", "batch_size " + std::to_string(batch_size) + " is not a positive multiple of 4",
                {{"batch_size", batch_size}});
  std::array<std::vector<std::size_t>, 4> pools;
  for (std::size_t i = 0; i < points.size(); ++i) pools[category_index(points[i].category())].push_back(i);
  for (auto cat : kAllCategories)
    if (pools[category_index(cat)].empty())
      throw Error("MissingCategory", "no points in category " + std::string(to_string(cat)),
                  {{"category", std::string(to_string(cat))}});

  std::array<std::mt19937_64, 4> rngs = {derive_rng(seed, 0), derive_rng(seed, 1), derive_rng(seed, 2), derive_rng(seed, 3)};
  std::array<std::size_t, 4> cursor{};
  for (std::size_t c = 0; c < 4; ++c) fisher_yates(std::span<std::size_t>(pools[c]), rngs[c]);
  auto order_rng = derive_rng(seed, 4);

  BatchPlan plan{batch_size, seed, {}};
  const std::size_t per = batch_size / 4;
  for (std::size_t b = 0; b < num_batches; ++b) {
    std::vector<std::size_t> batch;
    for (std::size_t c = 0; c < 4; ++c) {
      for (std::size_t k = 0; k < per; ++k) {
        if (cursor[c] == pools[c].size()) {
          fisher_yates(std::span<std::size_t>(pools[c]), rngs[c]);
          cursor[c] = 0;
        }
        batch.push_back(pools[c][cursor[c]++]);
      }
    }
    fisher_yates(std::span<std::size_t>(batch), order_rng);
    std::vector<std::string> ids;
    for (auto i : batch) ids.push_back(points[i].dp_id());
    plan.batches.push_back(std::move(ids));
  }
  return plan;
}

// One epoch = ceil(|points| / batch_size) batches.
inline BatchPlan balanced_batches(const std::vector<DecisionPoint>& points, std::size_t batch_size, std::uint64_t seed,
                                  std::size_t epochs) {
  const std::size_t per_epoch = batch_size == 0 ? 0 : (points.size() + batch_size - 1) / batch_size;
  return balanced_batches_n(points, batch_size, seed, per_epoch * epochs);
}

struct SftExample {
  std::string dp_id;
  prompting::Mode mode = prompting::Mode::DecisionOnly;
  std::string prompt;
  std::string completion;
  Category category = Category::I1;
};

using ReasoningLookup = std::map<std::string, std::string>;  // dp_id -> trace

inline SftExample make_sft_example(const DecisionPoint& dp, const Conversation& conv, const prompting::PromptConfig& cfg,
                                   const ReasoningLookup* reasoning,
                                   const prompting::Tokenizer& tok = prompting::default_tokenizer()) {
  SftExample ex;
  ex.dp_id = dp.dp_id();
  ex.mode = cfg.mode;
  ex.category = dp.category();
  ex.prompt = prompting::render(dp, conv, cfg, tok).prompt_text();
  if (cfg.mode == prompting::Mode::DecisionOnly) {
    ex.completion = prompting::render_completion(dp.label());
  } else {
    const auto it = reasoning ? reasoning->find(dp.dp_id()) : ReasoningLookup::const_iterator{};
    if (!reasoning || it == reasoning->end())
      throw Error("MissingReasoning", "no reasoning trace for " + dp.dp_id(), {{"dp_id", dp.dp_id()}});
    ex.completion = prompting::render_completion(dp.label(), it->second);
  }
  return ex;
}

// All examples are built before returning, so a missing trace fails the
// whole export.
inline std::vector<SftExample> export_sft(const std::vector<DecisionPoint>& points, const ConversationIndex& convs,
                                          const prompting::PromptConfig& cfg, const ReasoningLookup* reasoning = nullptr,
                                          const prompting::Tokenizer& tok = prompting::default_tokenizer()) {
  std::vector<SftExample> out;
  out.reserve(points.size());
  for (const auto& dp : points) out.push_back(make_sft_example(dp, convs.resolve(dp), cfg, reasoning, tok));
  return out;
}

}  // namespace turntake::dataset
