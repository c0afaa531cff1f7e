#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "turntake/core.hpp"
#include "turntake/extract.hpp"
#include "turntake/prompting.hpp"

namespace turntake::backends {

using prompting::ModelOutput;
using prompting::PromptBundle;

enum class BackendKind { RuleBased, RemoteChat, Replay };

inline std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::RuleBased: return "rule_based";
    case BackendKind::RemoteChat: return "remote_chat";
    case BackendKind::Replay: return "replay";
  }
  return "?";
}

inline BackendKind parse_backend_kind(std::string_view s) {
  if (s == "rule_based" || s == "rule") return BackendKind::RuleBased;
  if (s == "remote_chat" || s == "remote") return BackendKind::RemoteChat;
  if (s == "replay") return BackendKind::Replay;
  throw Error("SchemaViolation", "unknown backend kind '" + std::string(s) + "'", {{"field", "backend"}});
}

struct BackendConfig {
  std::string backend_id;
  BackendKind kind = BackendKind::RuleBased;
  std::optional<std::string> endpoint_url;
  std::optional<std::string> model_name;
  double temperature = 0.0;
  int max_retries = 3;
  double timeout_s = 60.0;
  std::optional<std::string> cache_dir;
  int max_tokens = 256;
  int backoff_base_ms = 500;
  int backoff_max_ms = 30000;

  void validate() const {
    if (!(temperature >= 0.0)) throw Error("SchemaViolation", "temperature must be >= 0", {{"field", "temperature"}});
    if (max_retries < 0) throw Error("SchemaViolation", "max_retries must be >= 0", {{"field", "max_retries"}});
    if (kind == BackendKind::RemoteChat && (!endpoint_url || endpoint_url->empty() || !model_name || model_name->empty()))
      throw Error("SchemaViolation", "remote_chat requires endpoint_url and model_name", {{"field", "endpoint_url"}});
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"backend_id", backend_id},     {"kind", std::string(to_string(kind))},
                     {"temperature", temperature},   {"max_retries", max_retries},
                     {"timeout_s", timeout_s},       {"max_tokens", max_tokens},
                     {"backoff_base_ms", backoff_base_ms}};
    j["endpoint_url"] = endpoint_url ? nlohmann::json(*endpoint_url) : nlohmann::json(nullptr);
    j["model_name"] = model_name ? nlohmann::json(*model_name) : nlohmann::json(nullptr);
    j["cache_dir"] = cache_dir ? nlohmann::json(*cache_dir) : nlohmann::json(nullptr);
    return j;
  }
};

// Everything a backend may look at for one decision.
struct DecisionContext {
  const DecisionQuery& query;
  const Conversation& conversation;
  const PromptBundle& bundle;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual const std::string& id() const = 0;
  // Deterministic backends record latency 0 and no timestamp, so their
  // prediction files are byte-reproducible.
  virtual bool deterministic() const = 0;
  virtual ModelOutput decide(const DecisionContext& ctx) = 0;
};

// ---- rule-based baseline ----------------------------------------------------

// Speak iff the target is referenced in the current turn.
inline ModelOutput decide_rule_based(const DecisionQuery& q, const Conversation& conv) {
  const auto& target = conv.speaker(q.target);
  const auto& current = conv.utterances.at(q.boundary_t);
  const bool named = extract::referenced(current, target);
  const std::string reasoning = named ? "The most recent utterance refers to " + target.display_name + " directly."
                                      : "The most recent utterance does not refer to " + target.display_name + ".";
  return prompting::parse_output(
      prompting::render_completion(named ? Decision::Speak : Decision::Silent, reasoning));
}

class RuleBasedBackend final : public Backend {
 public:
  explicit RuleBasedBackend(std::string id = "rule_based") : id_(std::move(id)) {}
  const std::string& id() const override { return id_; }
  bool deterministic() const override { return true; }
  ModelOutput decide(const DecisionContext& ctx) override { return decide_rule_based(ctx.query, ctx.conversation); }

 private:
  std::string id_;
};

// ---- replay -----------------------------------------------------------------

using ReplayTable = std::map<std::string, std::string>;  // dp_id -> raw output

// {"dp_id": str, "raw": str} per line; later lines override earlier ones.
inline ReplayTable read_replay(std::istream& in) {
  ReplayTable t;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("MalformedRecord", "replay line " + std::to_string(line_no) + ": " + e.what(), {{"line_no", line_no}});
    }
    if (!j.is_object() || !j.contains("dp_id") || !j["dp_id"].is_string() || !j.contains("raw") || !j["raw"].is_string())
      throw Error("SchemaViolation", "replay line " + std::to_string(line_no) + " needs string dp_id and raw",
                  {{"line_no", line_no}});
    t[j["dp_id"].get<std::string>()] = j["raw"].get<std::string>();
  }
  return t;
}

inline ModelOutput decide_replay(const std::string& dp_id, const ReplayTable& table) {
  auto it = table.find(dp_id);
  if (it == table.end()) throw Error("MissingReplayEntry", "no replay entry for " + dp_id, {{"dp_id", dp_id}});
  return prompting::parse_output(it->second);
}

class ReplayBackend final : public Backend {
 public:
  ReplayBackend(ReplayTable table, std::string id = "replay") : table_(std::move(table)), id_(std::move(id)) {}
  const std::string& id() const override { return id_; }
  bool deterministic() const override { return true; }
  ModelOutput decide(const DecisionContext& ctx) override { return decide_replay(ctx.query.dp_id, table_); }

 private:
  ReplayTable table_;
  std::string id_;
};

// ---- label-conditioned distillation ----------------------------------------

struct DistillationRequest {
  std::string dp_id;
  std::string system;  // system message (with repeats)
  std::string user;    // context, instruction, and the label-conditioned ask
  std::string text() const { return system + "\n\n" + user; }
};

inline std::string decision_phrase(Decision d) { return d == Decision::Speak ? "START TALKING" : "STAY SILENT"; }

// The teacher sees the same system prompt, instruction and context as the
// student, plus the ground-truth decision, and is asked for one sentence
// that justifies exactly that decision.
inline DistillationRequest build_distillation_request(const DecisionPoint& dp, const Conversation& conv,
                                                      const prompting::PromptConfig& cfg,
                                                      const prompting::Tokenizer& tok = prompting::default_tokenizer()) {
  const auto bundle = prompting::render(dp, conv, cfg, tok);
  const auto& name = conv.speaker(dp.target()).display_name;
  const std::string label(to_string(dp.label()));
  DistillationRequest r;
  r.dp_id = dp.dp_id();
  r.system = bundle.system_message();
  r.user = bundle.user_message() + "\n\nThe ground-truth decision for Speaker " + name + " at this point is " + label +
           ".\nWrite exactly one sentence that justifies why Speaker " + name + " should " + decision_phrase(dp.label()) +
           " now. The sentence must be consistent with the decision " + label +
           " and grounded in the conversation above. Reply with the sentence inside <reasoning></reasoning> tags.";
  return r;
}

// The trace inside <reasoning> tags if present, else the whole trimmed reply.
inline std::string extract_teacher_trace(std::string_view raw) {
  if (auto r = prompting::extract_tag(raw, "reasoning")) return text::normalize(*r);
  return text::normalize(raw);
}

struct TraceVerdict {
  bool accepted = false;
  std::string reason;  // "", "empty", "too_many_sentences", "contradiction"
  bool operator==(const TraceVerdict&) const = default;
};

// Sentence terminators followed by whitespace or end of text. A period after
// a short abbreviation ("Mr.", "e.g.") does not end a sentence.
inline std::size_t count_sentences(std::string_view s) {
  static const char* const kAbbrev[] = {"mr", "mrs", "ms", "dr", "st", "vs", "etc", "e.g", "i.e", "jr", "sr"};
  const std::string t = text::normalize(s);
  std::size_t count = 0;
  bool content = false;
  for (std::size_t i = 0; i < t.size(); ++i) {
    const char c = t[i];
    if (c != '.' && c != '!' && c != '?') {
      if (!text::is_space(c)) content = true;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < t.size() && (t[j + 1] == '.' || t[j + 1] == '!' || t[j + 1] == '?' || t[j + 1] == '"' || t[j + 1] == '\''))
      ++j;
    if (j + 1 < t.size() && !text::is_space(t[j + 1])) continue;
    if (c == '.' && j == i) {
      std::size_t w = i;
      while (w > 0 && !text::is_space(t[w - 1])) --w;
      const std::string word = text::to_lower_ascii(t.substr(w, i - w));
      if (std::any_of(std::begin(kAbbrev), std::end(kAbbrev), [&](const char* a) { return word == a; })) continue;
    }
    if (content) ++count;
    content = false;
    i = j;
  }
  if (content) ++count;
  return count;
}

namespace detail {

inline bool has_upper_keyword(std::string_view s, std::string_view word) {
  for (auto pos = s.find(word); pos != std::string_view::npos; pos = s.find(word, pos + 1)) {
    const auto end = pos + word.size();
    if ((pos == 0 || !text::is_word_byte(s[pos - 1])) && (end == s.size() || !text::is_word_byte(s[end]))) return true;
  }
  return false;
}

}  // namespace detail

// Rejects empty traces, traces over `max_sentences`, and traces asserting
// the opposite decision (the opposite upper-case keyword, or a phrase such
// as "stay silent" for a Speak label).
inline TraceVerdict validate_trace(std::string_view trace, Decision label, std::size_t max_sentences = 1) {
  const std::string t = text::normalize(trace);
  if (t.empty()) return {false, "empty"};
  if (count_sentences(t) > max_sentences) return {false, "too_many_sentences"};
  static const char* const kSilentPhrases[] = {"stay silent",    "stays silent",    "remain silent",      "remains silent",
                                               "keep silent",    "stay quiet",      "keep quiet",         "should not speak",
                                               "shouldn't speak", "should not respond", "shouldn't respond"};
  static const char* const kSpeakPhrases[] = {"should speak",     "should respond",    "should reply",
                                              "should answer",    "should start talking", "start talking",
                                              "needs to respond", "must respond",      "is expected to respond"};
  const std::string low = text::to_lower_ascii(t);
  const bool speak = label == Decision::Speak;
  if (detail::has_upper_keyword(t, speak ? "SILENT" : "SPEAK")) return {false, "contradiction"};
  auto asserts = [&](const char* phrase) {
    const std::string_view p(phrase);
    for (auto pos = low.find(p); pos != std::string::npos; pos = low.find(p, pos + 1)) {
      // "not stay silent" / "not start talking" negate rather than assert.
      const bool negated = pos >= 4 && low.compare(pos - 4, 4, "not ") == 0;
      if (!negated) return true;
    }
    return false;
  };
  if (speak ? std::any_of(std::begin(kSilentPhrases), std::end(kSilentPhrases), asserts)
            : std::any_of(std::begin(kSpeakPhrases), std::end(kSpeakPhrases), asserts))
    return {false, "contradiction"};
  return {true, ""};
}

// ---- prediction records & evaluation -----------------------------------------

struct PredictionRecord {
  std::string dp_id;
  std::string backend_id;
  ModelOutput output;
  double latency_ms = 0;
  std::string prompt_hash;
  std::optional<std::string> created_at;  // ISO-8601 UTC; absent for deterministic backends
};

inline std::string utc_now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline nlohmann::json to_json(const PredictionRecord& r) {
  nlohmann::json j{{"dp_id", r.dp_id}, {"backend_id", r.backend_id}, {"raw", r.output.raw}};
  j["decision"] = r.output.decision ? nlohmann::json(std::string(to_string(*r.output.decision))) : nlohmann::json(nullptr);
  j["reasoning"] = r.output.reasoning ? nlohmann::json(*r.output.reasoning) : nlohmann::json(nullptr);
  j["confidence"] = r.output.confidence ? nlohmann::json(std::string(prompting::to_string(*r.output.confidence)))
                                        : nlohmann::json(nullptr);
  j["validity"] = std::string(prompting::to_string(r.output.validity));
  j["latency_ms"] = r.latency_ms;
  j["prompt_hash"] = r.prompt_hash;
  j["created_at"] = r.created_at ? nlohmann::json(*r.created_at) : nlohmann::json(nullptr);
  return j;
}

// Accepts full records or minimal {"dp_id", "raw"} / {"dp_id", "decision"}
// lines (e.g. from an external trainer). When "raw" is present it is
// re-parsed, so parser changes apply to old files.
inline PredictionRecord prediction_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("dp_id") || !j["dp_id"].is_string())
    throw Error("SchemaViolation", "prediction needs a string dp_id", {{"field", "dp_id"}});
  PredictionRecord r;
  r.dp_id = j["dp_id"].get<std::string>();
  r.backend_id = j.value("backend_id", std::string{});
  if (j.contains("raw") && j["raw"].is_string()) {
    r.output = prompting::parse_output(j["raw"].get<std::string>());
  } else if (j.contains("decision") && j["decision"].is_string()) {
    r.output.raw = j["decision"].get<std::string>();
    r.output.decision = parse_decision(r.output.raw);
    r.output.validity = r.output.decision ? prompting::Validity::WellFormed : prompting::Validity::Invalid;
  } else if (j.contains("decision") && j["decision"].is_null()) {
    r.output.validity = prompting::Validity::Invalid;
  } else {
    throw Error("SchemaViolation", "prediction needs 'raw' or 'decision'", {{"field", "raw"}});
  }
  if (j.contains("latency_ms") && j["latency_ms"].is_number()) r.latency_ms = j["latency_ms"].get<double>();
  r.prompt_hash = j.value("prompt_hash", std::string{});
  if (j.contains("created_at") && j["created_at"].is_string()) r.created_at = j["created_at"].get<std::string>();
  return r;
}

struct EvalOptions {
  prompting::PromptConfig prompt;
  int concurrency = 1;
};

// Runs `backend` over every point with at most `concurrency` decisions in
// flight. Records come back in input order whatever the completion order.
// The first backend error aborts the run and is rethrown.
inline std::vector<PredictionRecord> evaluate(const std::vector<DecisionPoint>& points, const ConversationIndex& convs,
                                              Backend& backend, const EvalOptions& opts,
                                              const prompting::Tokenizer& tok = prompting::default_tokenizer()) {
  // Render everything up front so input errors surface before any request.
  std::vector<PromptBundle> bundles;
  bundles.reserve(points.size());
  for (const auto& dp : points) bundles.push_back(prompting::render(dp, convs, opts.prompt, tok));

  std::vector<PredictionRecord> out(points.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;

  auto worker = [&] {
    while (!failed) {
      const std::size_t i = next++;
      if (i >= points.size()) return;
      try {
        const auto q = query_of(points[i]);
        const auto start = std::chrono::steady_clock::now();
        auto output = backend.decide({q, convs.resolve(q), bundles[i]});
        const auto end = std::chrono::steady_clock::now();
        PredictionRecord& r = out[i];
        r.dp_id = points[i].dp_id();
        r.backend_id = backend.id();
        r.output = std::move(output);
        r.prompt_hash = bundles[i].prompt_hash();
        if (!backend.deterministic()) {
          r.latency_ms = std::chrono::duration<double, std::milli>(end - start).count();
          r.created_at = utc_now_iso8601();
        }
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };

  const int n_threads = std::max(1, std::min<int>(opts.concurrency, static_cast<int>(std::max<std::size_t>(1, points.size()))));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
  return out;
}

}  // namespace turntake::backends
