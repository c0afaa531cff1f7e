#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "turntake/core.hpp"
#include "turntake/hash.hpp"
#include "turntake/prompt_assets.hpp"
#include "turntake/text.hpp"

namespace turntake::prompting {

inline constexpr std::string_view kMostRecentMarker = "[MOST RECENT]";

enum class Mode { DecisionOnly, ReasoningWithDecision };

inline std::string_view to_string(Mode m) {
  return m == Mode::DecisionOnly ? "decision_only" : "reasoning_with_decision";
}

inline Mode parse_mode(std::string_view s) {
  if (s == "decision_only") return Mode::DecisionOnly;
  if (s == "reasoning_with_decision") return Mode::ReasoningWithDecision;
  throw Error("SchemaViolation", "unknown mode '" + std::string(s) + "'", {{"field", "mode"}});
}

class Tokenizer {
 public:
  virtual ~Tokenizer() = default;
  virtual std::size_t count(std::string_view text) const = 0;
};

class WhitespaceTokenizer final : public Tokenizer {
 public:
  std::size_t count(std::string_view text) const override { return text::split_whitespace(text).size(); }
};

inline const Tokenizer& default_tokenizer() {
  static const WhitespaceTokenizer tok;
  return tok;
}

enum class BudgetScope { FullInput, ContextOnly };

struct PromptConfig {
  std::size_t token_budget = 2048;
  int system_repeats = 1;
  Mode mode = Mode::DecisionOnly;
  BudgetScope budget_scope = BudgetScope::FullInput;
};

struct PromptBundle {
  std::string system;
  std::string instruction;
  std::string context_block;
  Mode mode = Mode::DecisionOnly;
  std::size_t token_budget = 0;
  int system_repeats = 1;
  std::size_t first_context_index = 0;  // first retained utterance
  std::size_t token_count = 0;          // tokens of the budgeted portion

  std::string system_message() const {
    std::string out = system;
    for (int i = 1; i < system_repeats; ++i) out += "\n\n" + system;
    return out;
  }
  std::string user_message() const { return context_block + "\n\n" + instruction; }
  std::string prompt_text() const { return system_message() + "\n\n" + user_message(); }
  std::string prompt_hash() const { return content_hash({system_message(), user_message()}); }
};

inline std::string asset_hash(std::string_view asset) { return content_hash(asset); }

inline std::string instantiate_instruction(std::string_view target_name) {
  std::string out(assets::kInstructionTemplate);
  static constexpr std::string_view placeholder = "{target_speaker}";
  for (auto pos = out.find(placeholder); pos != std::string::npos; pos = out.find(placeholder, pos + target_name.size()))
    out.replace(pos, placeholder.size(), target_name);
  return out;
}

// Longest suffix of whole turns whose token total fits the budget. Returns
// the number of retained (trailing) turns; the last turn is mandatory.
inline std::size_t truncate_context(std::span<const std::size_t> turn_tokens, std::size_t budget) {
  if (turn_tokens.empty()) return 0;
  if (turn_tokens.back() > budget)
    throw Error("BudgetTooSmall", "current turn needs " + std::to_string(turn_tokens.back()) + " tokens, budget is " +
                                      std::to_string(budget),
                {{"budget", budget}, {"current_turn_tokens", turn_tokens.back()}});
  std::size_t used = 0;
  std::size_t kept = 0;
  for (std::size_t i = turn_tokens.size(); i-- > 0;) {
    if (used + turn_tokens[i] > budget) break;
    used += turn_tokens[i];
    ++kept;
  }
  return kept;
}

inline std::string render_line(const Conversation& conv, const Utterance& u) {
  return conv.speaker(u.speaker).display_name + ": " + u.text;
}

inline std::string render_current_line(const Conversation& conv, const Utterance& u) {
  return std::string(kMostRecentMarker) + " " + render_line(conv, u);
}

// Renders the prompt for `dp`: one "Name: text" line per retained turn with
// the current turn marked, the instruction naming the target, and the system
// prompt repeated `system_repeats` times. Earliest turns are dropped first
// until the budgeted portion fits.
inline PromptBundle render(const DecisionQuery& dp, const Conversation& conv, const PromptConfig& cfg,
                           const Tokenizer& tok = default_tokenizer()) {
  if (cfg.token_budget == 0) throw Error("SchemaViolation", "token_budget must be positive", {{"field", "token_budget"}});
  if (cfg.system_repeats < 1 || cfg.system_repeats > 2)
    throw Error("SchemaViolation", "system_repeats must be 1 or 2", {{"field", "system_repeats"}});
  if (conv.conv_id != dp.conv_id || dp.boundary_t >= conv.utterances.size() || !conv.find_speaker(dp.target))
    throw Error("DanglingConversation", "decision point " + dp.dp_id + " does not resolve", {{"dp_id", dp.dp_id}});

  PromptBundle b;
  b.system = std::string(assets::kSystemPrompt);
  b.instruction = instantiate_instruction(conv.speaker(dp.target).display_name);
  b.mode = cfg.mode;
  b.token_budget = cfg.token_budget;
  b.system_repeats = cfg.system_repeats;

  const std::size_t t = dp.boundary_t;
  std::vector<std::string> lines;
  std::vector<std::size_t> sizes;
  for (std::size_t i = 0; i <= t; ++i) {
    lines.push_back(i == t ? render_current_line(conv, conv.utterances[i]) : render_line(conv, conv.utterances[i]));
    sizes.push_back(tok.count(lines.back()));
  }

  std::size_t fixed = 0;
  if (cfg.budget_scope == BudgetScope::FullInput) fixed = tok.count(b.system_message()) + tok.count(b.instruction);
  if (fixed >= cfg.token_budget)
    throw Error("BudgetTooSmall", "system and instruction alone need " + std::to_string(fixed) + " tokens",
                {{"budget", cfg.token_budget}, {"fixed_tokens", fixed}});
  const std::size_t context_budget = cfg.token_budget - fixed;

  std::size_t kept = truncate_context(sizes, context_budget);
  auto assemble = [&](std::size_t keep) {
    b.first_context_index = lines.size() - keep;
    b.context_block.clear();
    for (std::size_t i = b.first_context_index; i < lines.size(); ++i) {
      if (i > b.first_context_index) b.context_block += '\n';
      b.context_block += lines[i];
    }
    b.token_count = cfg.budget_scope == BudgetScope::FullInput
                        ? tok.count(b.system_message()) + tok.count(b.user_message())
                        : tok.count(b.context_block);
  };
  assemble(kept);
  // Non-additive tokenizers can overshoot after joining; shed turns until it fits.
  while (b.token_count > cfg.token_budget && kept > 1) assemble(--kept);
  if (b.token_count > cfg.token_budget)
    throw Error("BudgetTooSmall", "prompt does not fit the budget even with only the current turn",
                {{"budget", cfg.token_budget}, {"tokens", b.token_count}});
  return b;
}

inline PromptBundle render(const DecisionPoint& dp, const Conversation& conv, const PromptConfig& cfg,
                           const Tokenizer& tok = default_tokenizer()) {
  return render(query_of(dp), conv, cfg, tok);
}

inline PromptBundle render(const DecisionPoint& dp, const ConversationIndex& convs, const PromptConfig& cfg,
                           const Tokenizer& tok = default_tokenizer()) {
  return render(query_of(dp), convs.resolve(dp), cfg, tok);
}

enum class Confidence { High, Medium, Low };
enum class Validity { WellFormed, FallbackParsed, Invalid };

inline std::string_view to_string(Confidence c) {
  switch (c) {
    case Confidence::High: return "high";
    case Confidence::Medium: return "medium";
    case Confidence::Low: return "low";
  }
  return "?";
}

inline std::string_view to_string(Validity v) {
  switch (v) {
    case Validity::WellFormed: return "well_formed";
    case Validity::FallbackParsed: return "fallback_parsed";
    case Validity::Invalid: return "invalid";
  }
  return "?";
}

inline std::optional<Confidence> parse_confidence(std::string_view s) {
  const std::string low = text::to_lower_ascii(text::trim(s));
  if (low == "high") return Confidence::High;
  if (low == "medium") return Confidence::Medium;
  if (low == "low") return Confidence::Low;
  return std::nullopt;
}

inline std::optional<Validity> parse_validity(std::string_view s) {
  for (auto v : {Validity::WellFormed, Validity::FallbackParsed, Validity::Invalid})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

struct ModelOutput {
  std::string raw;
  std::optional<Decision> decision;
  std::optional<std::string> reasoning;
  std::optional<Confidence> confidence;
  Validity validity = Validity::Invalid;

  bool operator==(const ModelOutput&) const = default;
};

// Content of the first <tag>...</tag> pair, if both ends exist.
inline std::optional<std::string> extract_tag(std::string_view raw, std::string_view tag) {
  const std::string open = "<" + std::string(tag) + ">";
  const std::string close = "</" + std::string(tag) + ">";
  const auto b = raw.find(open);
  if (b == std::string_view::npos) return std::nullopt;
  const auto start = b + open.size();
  const auto e = raw.find(close, start);
  if (e == std::string_view::npos) return std::nullopt;
  return std::string(raw.substr(start, e - start));
}

namespace detail {

// Last upper-case SPEAK/SILENT standing as a whole word.
inline std::optional<Decision> last_decision_keyword(std::string_view raw) {
  std::optional<Decision> found;
  std::size_t best = 0;
  for (auto [word, d] : {std::pair<std::string_view, Decision>{"SPEAK", Decision::Speak}, {"SILENT", Decision::Silent}}) {
    for (auto pos = raw.find(word); pos != std::string_view::npos; pos = raw.find(word, pos + 1)) {
      const auto end = pos + word.size();
      const bool left = pos == 0 || !text::is_word_byte(raw[pos - 1]);
      const bool right = end == raw.size() || !text::is_word_byte(raw[end]);
      if (left && right && (!found || pos >= best)) {
        found = d;
        best = pos;
      }
    }
  }
  return found;
}

}  // namespace detail

// Tags first; without a <decision> tag, the last standalone SPEAK/SILENT
// keyword is used. A <decision> tag holding anything else is invalid.
inline ModelOutput parse_output(std::string_view raw) {
  ModelOutput out;
  out.raw = std::string(raw);
  if (auto r = extract_tag(raw, "reasoning")) out.reasoning = std::string(text::trim(*r));
  if (auto c = extract_tag(raw, "confidence")) out.confidence = parse_confidence(*c);
  if (auto d = extract_tag(raw, "decision")) {
    out.decision = parse_decision(*d);
    out.validity = out.decision ? Validity::WellFormed : Validity::Invalid;
    return out;
  }
  out.decision = detail::last_decision_keyword(raw);
  out.validity = out.decision ? Validity::FallbackParsed : Validity::Invalid;
  return out;
}

inline std::string decision_tag(Decision d) { return "<decision>" + std::string(to_string(d)) + "</decision>"; }

inline std::string render_completion(Decision d, const std::optional<std::string>& reasoning = std::nullopt) {
  if (!reasoning) return decision_tag(d);
  return "<reasoning>" + *reasoning + "</reasoning>\n" + decision_tag(d);
}

}  // namespace turntake::prompting
