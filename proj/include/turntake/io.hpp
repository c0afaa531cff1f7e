#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "turntake/core.hpp"
#include "turntake/dataset.hpp"
#include "turntake/prompting.hpp"

namespace turntake::io {

using nlohmann::json;

// ---- conversations ---------------------------------------------------------

inline json to_json(const SpeakerId& s) {
  return {{"id", s.id}, {"display_name", s.display_name}, {"aliases", s.aliases}};
}

inline json to_json(const Utterance& u) {
  json j{{"index", u.index}, {"speaker", u.speaker}, {"text", u.text}};
  if (u.start_s) j["start_s"] = *u.start_s;
  if (u.end_s) j["end_s"] = *u.end_s;
  if (u.addressees) j["addressees"] = *u.addressees;
  return j;
}

inline json to_json(const Conversation& c) {
  json roster = json::array();
  for (const auto& s : c.roster) roster.push_back(to_json(s));
  json utts = json::array();
  for (const auto& u : c.utterances) utts.push_back(to_json(u));
  return {{"conv_id", c.conv_id}, {"source", c.source}, {"roster", roster}, {"utterances", utts}};
}

namespace detail {

inline const json& field(const json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) throw Error("SchemaViolation", std::string("missing field '") + name + "'", {{"field", name}});
  return j.at(name);
}

inline std::string string_field(const json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_string()) throw Error("SchemaViolation", std::string("field '") + name + "' must be a string", {{"field", name}});
  return v.get<std::string>();
}

}  // namespace detail

inline Conversation conversation_from_json(const json& j) {
  Conversation c;
  c.conv_id = detail::string_field(j, "conv_id");
  c.source = j.value("source", std::string{});
  for (const auto& s : detail::field(j, "roster")) {
    if (s.is_string()) {
      c.roster.push_back(make_speaker(s.get<std::string>()));
    } else {
      c.roster.push_back(make_speaker(detail::string_field(s, "id"), s.value("display_name", std::string{}),
                                      s.value("aliases", std::vector<std::string>{})));
    }
  }
  for (const auto& uj : detail::field(j, "utterances")) {
    Utterance u;
    u.index = uj.value("index", c.utterances.size());
    u.speaker = detail::string_field(uj, "speaker");
    u.text = detail::string_field(uj, "text");
    if (uj.contains("start_s") && !uj["start_s"].is_null()) u.start_s = uj["start_s"].get<double>();
    if (uj.contains("end_s") && !uj["end_s"].is_null()) u.end_s = uj["end_s"].get<double>();
    if (uj.contains("addressees") && !uj["addressees"].is_null())
      u.addressees = uj["addressees"].get<std::vector<std::string>>();
    c.utterances.push_back(std::move(u));
  }
  return c;
}

// ---- decision points -------------------------------------------------------

inline json to_json(const DecisionPoint& dp) {
  json j{{"dp_id", dp.dp_id()},
         {"conv_id", dp.conv_id()},
         {"boundary_t", dp.boundary_t()},
         {"target", dp.target()},
         {"label", std::string(to_string(dp.label()))},
         {"category", std::string(to_string(dp.category()))}};
  if (dp.split()) j["split"] = std::string(to_string(*dp.split()));
  return j;
}

inline DecisionPoint decision_point_from_json(const json& j) {
  const auto label = parse_decision(detail::string_field(j, "label"));
  if (!label) throw Error("SchemaViolation", "label must be SPEAK or SILENT", {{"field", "label"}});
  const auto cat = parse_category(detail::string_field(j, "category"));
  if (!cat) throw Error("SchemaViolation", "category must be one of I1, I2, S1, S2", {{"field", "category"}});
  std::optional<Split> split;
  if (j.contains("split") && !j["split"].is_null()) {
    split = parse_split(detail::string_field(j, "split"));
    if (!split) throw Error("SchemaViolation", "split must be train, val or test", {{"field", "split"}});
  }
  const auto& bt = detail::field(j, "boundary_t");
  if (!bt.is_number_unsigned()) throw Error("SchemaViolation", "boundary_t must be a non-negative integer", {{"field", "boundary_t"}});
  return DecisionPoint(detail::string_field(j, "dp_id"), detail::string_field(j, "conv_id"), bt.get<std::size_t>(),
                       detail::string_field(j, "target"), *label, *cat, split);
}

// ---- SFT / batches ---------------------------------------------------------

inline json to_json(const dataset::SftExample& e) {
  return {{"dp_id", e.dp_id},
          {"mode", std::string(prompting::to_string(e.mode))},
          {"prompt", e.prompt},
          {"completion", e.completion},
          {"category", std::string(to_string(e.category))}};
}

inline dataset::SftExample sft_example_from_json(const json& j) {
  dataset::SftExample e;
  e.dp_id = detail::string_field(j, "dp_id");
  e.mode = prompting::parse_mode(detail::string_field(j, "mode"));
  e.prompt = detail::string_field(j, "prompt");
  e.completion = detail::string_field(j, "completion");
  const auto cat = parse_category(detail::string_field(j, "category"));
  if (!cat) throw Error("SchemaViolation", "bad category", {{"field", "category"}});
  e.category = *cat;
  return e;
}

inline json to_json(const dataset::BatchPlan& p) {
  return {{"batch_size", p.batch_size}, {"seed", p.seed}, {"num_batches", p.batches.size()}, {"batches", p.batches}};
}

inline json to_json(const prompting::ModelOutput& o) {
  json j{{"raw", o.raw}, {"validity", std::string(prompting::to_string(o.validity))}};
  j["decision"] = o.decision ? json(std::string(to_string(*o.decision))) : json(nullptr);
  j["reasoning"] = o.reasoning ? json(*o.reasoning) : json(nullptr);
  j["confidence"] = o.confidence ? json(std::string(prompting::to_string(*o.confidence))) : json(nullptr);
  return j;
}

// ---- files -----------------------------------------------------------------

// Calls `fn(record, line_no)` for each non-blank line; parse failures raise
// MalformedRecord and schema errors gain the line number.
inline void for_each_jsonl(std::istream& in, const std::function<void(const json&, std::size_t)>& fn) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw Error("MalformedRecord", "line " + std::to_string(line_no) + ": " + e.what(), {{"line_no", line_no}});
    }
    try {
      fn(j, line_no);
    } catch (const Error& e) {
      if (e.details().contains("line_no")) throw;
      auto d = e.details();
      d["line_no"] = line_no;
      throw Error(e.code(), "line " + std::to_string(line_no) + ": " + e.what(), d);
    } catch (const json::exception& e) {
      throw Error("SchemaViolation", "line " + std::to_string(line_no) + ": " + e.what(), {{"line_no", line_no}});
    }
  }
}

inline std::ifstream open_input(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("IoError", "cannot open '" + p.string() + "' for reading", {{"path", p.string()}});
  return in;
}

inline std::string read_file(const std::filesystem::path& p) {
  auto in = open_input(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Write-temp-then-rename so readers never see a partial file.
inline void write_file_atomic(const std::filesystem::path& p, std::string_view contents) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  static std::atomic<unsigned> counter{0};
  auto tmp = p;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter++);
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("IoError", "cannot open '" + tmp.string() + "' for writing", {{"path", tmp.string()}});
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error("IoError", "write failed for '" + tmp.string() + "'", {{"path", tmp.string()}});
  }
  std::error_code ec;
  std::filesystem::rename(tmp, p, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw Error("IoError", "cannot rename onto '" + p.string() + "': " + ec.message(), {{"path", p.string()}});
  }
}

template <typename T>
std::string to_jsonl(const std::vector<T>& items) {
  std::string out;
  for (const auto& it : items) {
    out += to_json(it).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<Conversation> read_conversations(std::istream& in) {
  std::vector<Conversation> out;
  for_each_jsonl(in, [&](const json& j, std::size_t) { out.push_back(conversation_from_json(j)); });
  return out;
}

inline std::vector<DecisionPoint> read_decision_points(std::istream& in) {
  std::vector<DecisionPoint> out;
  for_each_jsonl(in, [&](const json& j, std::size_t) { out.push_back(decision_point_from_json(j)); });
  return out;
}

inline std::vector<Conversation> read_conversations(const std::filesystem::path& p) {
  auto in = open_input(p);
  return read_conversations(in);
}

inline std::vector<DecisionPoint> read_decision_points(const std::filesystem::path& p) {
  auto in = open_input(p);
  return read_decision_points(in);
}

// {"dp_id": str, "reasoning": str} per line.
inline dataset::ReasoningLookup read_reasoning(std::istream& in) {
  dataset::ReasoningLookup out;
  for_each_jsonl(in, [&](const json& j, std::size_t) {
    out[detail::string_field(j, "dp_id")] = detail::string_field(j, "reasoning");
  });
  return out;
}

}  // namespace turntake::io
