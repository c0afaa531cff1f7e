#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>
#include <utility>

#include "turntake/error.hpp"
#include "turntake/text.hpp"

namespace turntake {

struct SpeakerId {
  std::string id;
  std::string display_name;
  std::vector<std::string> aliases;  // lowercased, deduplicated, includes lower(display_name)

  bool operator==(const SpeakerId&) const = default;
};

// Builds a roster entry. Aliases are normalized, lowercased and deduplicated
// in first-seen order; lowercase(display_name) is always the first alias.
inline SpeakerId make_speaker(std::string id, std::string display_name = {},
                              const std::vector<std::string>& extra_aliases = {}) {
  id = text::normalize(id);
  if (id.empty()) throw Error("SchemaViolation", "speaker id must be non-empty", {{"field", "speaker"}});
  display_name = display_name.empty() ? id : text::normalize(display_name);
  SpeakerId s{id, display_name, {}};
  auto add = [&](std::string_view a) {
    std::string low = text::to_lower_ascii(text::normalize(a));
    if (!low.empty() && std::find(s.aliases.begin(), s.aliases.end(), low) == s.aliases.end())
      s.aliases.push_back(std::move(low));
  };
  add(display_name);
  for (const auto& a : extra_aliases) add(a);
  return s;
}

struct Utterance {
  std::size_t index = 0;
  std::string speaker;  // SpeakerId::id
  std::string text;
  std::optional<double> start_s;
  std::optional<double> end_s;
  std::optional<std::vector<std::string>> addressees;  // SpeakerId::id values

  bool operator==(const Utterance&) const = default;
};

struct Conversation {
  std::string conv_id;
  std::string source;
  std::vector<SpeakerId> roster;
  std::vector<Utterance> utterances;

  const SpeakerId* find_speaker(std::string_view id) const {
    for (const auto& s : roster)
      if (s.id == id) return &s;
    return nullptr;
  }

  const SpeakerId& speaker(std::string_view id) const {
    if (const auto* s = find_speaker(id)) return *s;
    throw Error("UnknownSpeaker", "speaker '" + std::string(id) + "' not in roster of " + conv_id,
                {{"conv_id", conv_id}, {"speaker", std::string(id)}});
  }

  bool operator==(const Conversation&) const = default;
};

enum class Decision { Speak, Silent };
enum class Category { I1, I2, S1, S2 };
enum class Split { Train, Val, Test };

inline constexpr Category kAllCategories[] = {Category::I1, Category::I2, Category::S1, Category::S2};

inline std::string_view to_string(Decision d) { return d == Decision::Speak ? "SPEAK" : "SILENT"; }

inline std::string_view to_string(Category c) {
  switch (c) {
    case Category::I1: return "I1";
    case Category::I2: return "I2";
    case Category::S1: return "S1";
    case Category::S2: return "S2";
  }
  return "?";
}

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline std::optional<Decision> parse_decision(std::string_view s) {
  const std::string up = text::to_upper_ascii(text::trim(s));
  if (up == "SPEAK") return Decision::Speak;
  if (up == "SILENT") return Decision::Silent;
  return std::nullopt;
}

inline std::optional<Category> parse_category(std::string_view s) {
  for (auto c : kAllCategories)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

inline std::optional<Split> parse_split(std::string_view s) {
  for (auto sp : {Split::Train, Split::Val, Split::Test})
    if (to_string(sp) == s) return sp;
  return std::nullopt;
}

inline Decision label_of(Category c) {
  return (c == Category::I1 || c == Category::I2) ? Decision::Speak : Decision::Silent;
}

inline Decision opposite(Decision d) { return d == Decision::Speak ? Decision::Silent : Decision::Speak; }

inline std::size_t category_index(Category c) { return static_cast<std::size_t>(c); }

// A labeled (boundary, target) pair. Construction enforces the
// category/label coupling and the at-least-one-context-turn rule.
class DecisionPoint {
 public:
  DecisionPoint(std::string dp_id, std::string conv_id, std::size_t boundary_t, std::string target, Decision label,
                Category category, std::optional<Split> split = std::nullopt)
      : dp_id_(std::move(dp_id)),
        conv_id_(std::move(conv_id)),
        boundary_t_(boundary_t),
        target_(std::move(target)),
        label_(label),
        category_(category),
        split_(split) {
    if (label_of(category_) != label_)
      throw Error("CategoryLabelMismatch",
                  "category " + std::string(to_string(category_)) + " contradicts label " + std::string(to_string(label_)),
                  {{"dp_id", dp_id_}});
    if (boundary_t_ < 1)
      throw Error("NoContextTurns", "decision point needs at least one prior context turn", {{"dp_id", dp_id_}});
    if (target_.empty()) throw Error("SchemaViolation", "target must be non-empty", {{"field", "target"}});
  }

  const std::string& dp_id() const { return dp_id_; }
  const std::string& conv_id() const { return conv_id_; }
  std::size_t boundary_t() const { return boundary_t_; }
  const std::string& target() const { return target_; }
  Decision label() const { return label_; }
  Category category() const { return category_; }
  std::optional<Split> split() const { return split_; }

  DecisionPoint with_split(std::optional<Split> s) const {
    DecisionPoint copy = *this;
    copy.split_ = s;
    return copy;
  }

  bool operator==(const DecisionPoint&) const = default;

 private:
  std::string dp_id_;
  std::string conv_id_;
  std::size_t boundary_t_;
  std::string target_;
  Decision label_;
  Category category_;
  std::optional<Split> split_;
};

// The unlabeled part of a decision point: what a backend is asked about.
struct DecisionQuery {
  std::string dp_id;
  std::string conv_id;
  std::size_t boundary_t = 0;
  std::string target;
};

inline DecisionQuery query_of(const DecisionPoint& dp) {
  return {dp.dp_id(), dp.conv_id(), dp.boundary_t(), dp.target()};
}

struct Violation {
  std::string code;  // EmptyRoster | UnknownSpeaker | NonMonotonicOrder | EmptyText
  std::optional<std::size_t> index;
  std::string message;

  bool operator==(const Violation&) const = default;
};

struct ValidationOptions {
  // Parsers defer EmptyText to the filtering stage, which counts those drops.
  bool allow_empty_text = false;
};

inline std::vector<Violation> validate_conversation(const Conversation& conv, ValidationOptions opts = {}) {
  std::vector<Violation> out;
  if (conv.roster.size() < 2)
    out.push_back({"EmptyRoster", std::nullopt,
                   "roster has " + std::to_string(conv.roster.size()) + " speaker(s); at least 2 required"});
  for (std::size_t i = 0; i < conv.roster.size(); ++i) {
    if (conv.roster[i].id.empty()) out.push_back({"EmptyRoster", std::nullopt, "roster entry with empty id"});
    for (std::size_t j = 0; j < i; ++j)
      if (conv.roster[j].id == conv.roster[i].id)
        out.push_back({"EmptyRoster", std::nullopt, "duplicate roster id '" + conv.roster[i].id + "'"});
  }
  std::optional<double> last_start;
  for (std::size_t i = 0; i < conv.utterances.size(); ++i) {
    const auto& u = conv.utterances[i];
    if (u.index != i)
      out.push_back({"NonMonotonicOrder", i, "utterance index " + std::to_string(u.index) + " at position " + std::to_string(i)});
    if (!conv.find_speaker(u.speaker))
      out.push_back({"UnknownSpeaker", i, "speaker '" + u.speaker + "' not in roster"});
    if (u.addressees)
      for (const auto& a : *u.addressees)
        if (!conv.find_speaker(a)) out.push_back({"UnknownSpeaker", i, "addressee '" + a + "' not in roster"});
    if (!opts.allow_empty_text && text::normalize(u.text).empty()) out.push_back({"EmptyText", i, "empty utterance text"});
    if (u.start_s && u.end_s && *u.start_s > *u.end_s)
      out.push_back({"NonMonotonicOrder", i, "start_s after end_s"});
    if (u.start_s) {
      if (last_start && *u.start_s < *last_start) out.push_back({"NonMonotonicOrder", i, "start_s decreases"});
      last_start = u.start_s;
    }
  }
  return out;
}

inline nlohmann::json violations_to_json(const std::vector<Violation>& vs) {
  auto arr = nlohmann::json::array();
  for (const auto& v : vs) {
    nlohmann::json j{{"code", v.code}, {"message", v.message}};
    if (v.index) j["index"] = *v.index;
    arr.push_back(std::move(j));
  }
  return arr;
}

// Returns the conversation unchanged when valid, throws otherwise. The
// error code is the first violation's code; all violations are in details.
inline const Conversation& require_valid(const Conversation& conv, ValidationOptions opts = {}) {
  const auto vs = validate_conversation(conv, opts);
  if (!vs.empty())
    throw Error(vs.front().code, "conversation '" + conv.conv_id + "' is invalid: " + vs.front().message,
                {{"conv_id", conv.conv_id}, {"violations", violations_to_json(vs)}});
  return conv;
}

// Lookup of conversations by conv_id. Holds pointers; the vector it was
// built from must outlive it.
class ConversationIndex {
 public:
  ConversationIndex() = default;
  explicit ConversationIndex(const std::vector<Conversation>& convs) {
    for (const auto& c : convs) by_id_.emplace_back(c.conv_id, &c);
    std::sort(by_id_.begin(), by_id_.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  }

  const Conversation* find(std::string_view conv_id) const {
    auto it = std::lower_bound(by_id_.begin(), by_id_.end(), conv_id,
                               [](const auto& e, std::string_view id) { return e.first < id; });
    return (it != by_id_.end() && it->first == conv_id) ? it->second : nullptr;
  }

  // The conversation of `q`, checked to contain its boundary and target.
  const Conversation& resolve(const DecisionQuery& q) const {
    const Conversation* c = find(q.conv_id);
    if (!c || q.boundary_t >= c->utterances.size() || !c->find_speaker(q.target))
      throw Error("DanglingConversation",
                  "decision point " + q.dp_id + " does not resolve against conversation '" + q.conv_id + "'",
                  {{"dp_id", q.dp_id}, {"conv_id", q.conv_id}});
    return *c;
  }
  const Conversation& resolve(const DecisionPoint& dp) const { return resolve(query_of(dp)); }

 private:
  std::vector<std::pair<std::string, const Conversation*>> by_id_;
};

}  // namespace turntake
