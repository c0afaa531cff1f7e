#pragma once

#include <chrono>
#include <mutex>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "turntake/backends.hpp"
#include "turntake/core.hpp"
#include "turntake/prompting.hpp"

namespace turntake::service {

struct Response {
  int status = 200;
  nlohmann::json body;
};

inline Response error_response(int status, const std::string& code, const std::string& message) {
  return {status, {{"error", code}, {"message", message}}};
}

// Builds the request conversation. Accepts either an array of utterances or
// {"utterances": [...], "roster": [...]?}; each utterance is
// {"speaker": str, "text": str, "addressees": [str]?}.
inline Conversation conversation_from_request(const nlohmann::json& conv_json, const std::string& target) {
  const nlohmann::json* utts = &conv_json;
  std::vector<std::string> roster_labels;
  if (conv_json.is_object()) {
    if (!conv_json.contains("utterances")) throw Error("SchemaViolation", "conversation.utterances missing", {{"field", "utterances"}});
    utts = &conv_json["utterances"];
    if (conv_json.contains("roster")) roster_labels = conv_json["roster"].get<std::vector<std::string>>();
  }
  if (!utts->is_array()) throw Error("SchemaViolation", "conversation must be an array of utterances", {{"field", "conversation"}});

  Conversation conv{"request", "service", {}, {}};
  auto ensure = [&](const std::string& label) {
    auto sp = make_speaker(label);
    if (!conv.find_speaker(sp.id)) conv.roster.push_back(sp);
    return sp.id;
  };
  for (const auto& r : roster_labels) ensure(r);
  for (const auto& u : *utts) {
    if (!u.is_object() || !u.contains("speaker") || !u["speaker"].is_string())
      throw Error("SchemaViolation", "utterance needs a string speaker", {{"field", "speaker"}});
    if (!u.contains("text") || !u["text"].is_string())
      throw Error("SchemaViolation", "utterance needs a string text", {{"field", "text"}});
    Utterance utt;
    utt.index = conv.utterances.size();
    utt.speaker = ensure(u["speaker"].get<std::string>());
    utt.text = text::normalize(u["text"].get<std::string>());
    if (u.contains("addressees") && !u["addressees"].is_null()) {
      std::vector<std::string> ids;
      for (const auto& a : u["addressees"]) {
        if (!a.is_string()) throw Error("SchemaViolation", "addressees must be strings", {{"field", "addressees"}});
        ids.push_back(ensure(a.get<std::string>()));
      }
      utt.addressees = std::move(ids);
    }
    conv.utterances.push_back(std::move(utt));
  }
  ensure(target);
  return conv;
}

// POST /decide. The last utterance is the current turn; the decision is for
// `target` at the pause after it. Stateless per request.
inline Response handle_decide(const std::string& body, backends::Backend& backend, prompting::PromptConfig cfg,
                              const prompting::Tokenizer& tok = prompting::default_tokenizer()) {
  nlohmann::json req;
  try {
    req = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    return error_response(400, "MalformedRecord", e.what());
  }
  try {
    if (!req.is_object() || !req.contains("conversation"))
      return error_response(400, "SchemaViolation", "body needs 'conversation'");
    if (!req.contains("target") || !req["target"].is_string() || text::normalize(req["target"].get<std::string>()).empty())
      return error_response(400, "SchemaViolation", "body needs a non-empty string 'target'");
    if (req.contains("mode") && !req["mode"].is_null()) {
      if (!req["mode"].is_string()) return error_response(400, "SchemaViolation", "mode must be a string");
      cfg.mode = prompting::parse_mode(req["mode"].get<std::string>());
    }
    const std::string target_label = req["target"].get<std::string>();
    const Conversation conv = conversation_from_request(req["conversation"], target_label);
    const auto violations = validate_conversation(conv);
    if (!violations.empty()) {
      auto r = error_response(conv.utterances.empty() ? 422 : 400, violations.front().code, violations.front().message);
      r.body["violations"] = violations_to_json(violations);
      return r;
    }
    if (conv.utterances.size() < 2)
      return error_response(422, "NoContextTurns", "the current turn needs at least one preceding context turn");
    const std::string target = make_speaker(target_label).id;
    if (conv.utterances.back().speaker == target)
      return error_response(422, "TargetIsCurrentSpeaker", "target produced the current turn");

    const DecisionQuery q{"request", conv.conv_id, conv.utterances.size() - 1, target};
    const auto bundle = prompting::render(q, conv, cfg, tok);
    const auto start = std::chrono::steady_clock::now();
    prompting::ModelOutput out;
    try {
      out = backend.decide({q, conv, bundle});
    } catch (const Error& e) {
      return error_response(502, e.code(), e.what());
    }
    const double latency = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    nlohmann::json resp;
    resp["decision"] = out.decision ? nlohmann::json(std::string(to_string(*out.decision))) : nlohmann::json(nullptr);
    resp["reasoning"] = out.reasoning ? nlohmann::json(*out.reasoning) : nlohmann::json(nullptr);
    resp["confidence"] = out.confidence ? nlohmann::json(std::string(prompting::to_string(*out.confidence)))
                                        : nlohmann::json(nullptr);
    resp["validity"] = std::string(prompting::to_string(out.validity));
    resp["latency_ms"] = latency;
    return {200, resp};
  } catch (const Error& e) {
    const int status = e.code() == "BudgetTooSmall" ? 422 : 400;
    return error_response(status, e.code(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, "SchemaViolation", e.what());
  }
}

// Registers POST /decide and GET /healthz. Backends that are not thread-safe
// are serialized through `backend_mu` when provided.
inline void install_routes(httplib::Server& server, backends::Backend& backend, prompting::PromptConfig cfg,
                           std::mutex* backend_mu = nullptr) {
  server.Post("/decide", [&backend, cfg, backend_mu](const httplib::Request& req, httplib::Response& res) {
    Response r;
    if (backend_mu) {
      std::lock_guard lock(*backend_mu);
      r = handle_decide(req.body, backend, cfg);
    } else {
      r = handle_decide(req.body, backend, cfg);
    }
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  });
  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });
}

}  // namespace turntake::service
