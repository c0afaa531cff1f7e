#pragma once

#include <istream>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "turntake/core.hpp"
#include "turntake/text.hpp"

namespace turntake::ingest {

using FillerLexicon = std::set<std::string>;
using AliasMap = std::map<std::string, std::vector<std::string>>;  // speaker label -> extra aliases

inline FillerLexicon default_filler_lexicon() { return {"um", "uh", "uh-huh", "mm", "mm-hmm", "hmm", "erm", "huh"}; }

// One word per line; blank lines and lines starting with '#' are skipped.
inline FillerLexicon read_filler_lexicon(std::istream& in) {
  FillerLexicon lex;
  std::string line;
  while (std::getline(in, line)) {
    auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    lex.insert(text::to_lower_ascii(t));
  }
  return lex;
}

struct RawTranscriptLine {
  std::string speaker_label;
  std::string text;
  std::optional<double> start_s;
  std::optional<double> end_s;
  std::optional<std::vector<std::string>> addressees;
};

struct FilterReport {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::size_t dropped_filler = 0;
  std::size_t dropped_short = 0;
  std::size_t dropped_empty = 0;

  FilterReport& operator+=(const FilterReport& o) {
    input += o.input;
    kept += o.kept;
    dropped_filler += o.dropped_filler;
    dropped_short += o.dropped_short;
    dropped_empty += o.dropped_empty;
    return *this;
  }
  bool operator==(const FilterReport&) const = default;
};

namespace detail {

// Assembles one conversation from raw lines; roster = explicit entries,
// then speakers, then addressees, each in first-appearance order.
inline Conversation assemble(std::string conv_id, std::string source, const std::vector<RawTranscriptLine>& lines,
                             const std::vector<std::string>& explicit_roster, const AliasMap& aliases) {
  Conversation conv{std::move(conv_id), std::move(source), {}, {}};
  auto ensure = [&](const std::string& label) -> std::string {
    SpeakerId sp = [&] {
      auto it = aliases.find(text::normalize(label));
      return it == aliases.end() ? make_speaker(label) : make_speaker(label, {}, it->second);
    }();
    if (!conv.find_speaker(sp.id)) conv.roster.push_back(sp);
    return sp.id;
  };
  for (const auto& r : explicit_roster) ensure(r);
  for (const auto& l : lines) ensure(l.speaker_label);
  for (const auto& l : lines)
    if (l.addressees)
      for (const auto& a : *l.addressees) ensure(a);
  for (const auto& l : lines) {
    Utterance u;
    u.index = conv.utterances.size();
    u.speaker = make_speaker(l.speaker_label).id;
    u.text = text::normalize(l.text);
    u.start_s = l.start_s;
    u.end_s = l.end_s;
    if (l.addressees) {
      std::vector<std::string> ids;
      for (const auto& a : *l.addressees) ids.push_back(make_speaker(a).id);
      u.addressees = std::move(ids);
    }
    conv.utterances.push_back(std::move(u));
  }
  return conv;
}

inline Error schema_violation(std::string_view field, std::size_t line_no) {
  return Error("SchemaViolation", "line " + std::to_string(line_no) + ": missing or invalid field '" + std::string(field) + "'",
               {{"field", std::string(field)}, {"line_no", line_no}});
}

}  // namespace detail

// Utterance-per-line JSONL:
//   {"conv_id": str, "source": str, "speaker": str, "text": str,
//    "start_s": float?, "end_s": float?, "addressees": [str]?, "roster": [str]?}
// Conversations are returned in first-appearance order of conv_id, each with
// its utterances in line order.
inline std::vector<Conversation> parse_jsonl(std::istream& in, const AliasMap& aliases = {}) {
  struct Group {
    std::string source;
    std::vector<RawTranscriptLine> lines;
    std::vector<std::string> roster;
  };
  std::vector<std::string> order;
  std::map<std::string, Group> groups;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error("MalformedRecord", "line " + std::to_string(line_no) + ": " + e.what(), {{"line_no", line_no}});
    }
    if (!rec.is_object())
      throw Error("MalformedRecord", "line " + std::to_string(line_no) + ": record is not an object", {{"line_no", line_no}});

    auto req_string = [&](const char* field) -> std::string {
      auto it = rec.find(field);
      if (it == rec.end() || !it->is_string()) throw detail::schema_violation(field, line_no);
      return it->get<std::string>();
    };
    auto opt_number = [&](const char* field) -> std::optional<double> {
      auto it = rec.find(field);
      if (it == rec.end() || it->is_null()) return std::nullopt;
      if (!it->is_number()) throw detail::schema_violation(field, line_no);
      return it->get<double>();
    };
    auto opt_strings = [&](const char* field) -> std::optional<std::vector<std::string>> {
      auto it = rec.find(field);
      if (it == rec.end() || it->is_null()) return std::nullopt;
      if (!it->is_array()) throw detail::schema_violation(field, line_no);
      std::vector<std::string> out;
      for (const auto& v : *it) {
        if (!v.is_string() || text::normalize(v.get<std::string>()).empty()) throw detail::schema_violation(field, line_no);
        out.push_back(v.get<std::string>());
      }
      return out;
    };

    const std::string conv_id = req_string("conv_id");
    const std::string source = req_string("source");
    RawTranscriptLine raw{req_string("speaker"), req_string("text"), opt_number("start_s"), opt_number("end_s"),
                          opt_strings("addressees")};
    if (text::normalize(raw.speaker_label).empty()) throw detail::schema_violation("speaker", line_no);
    auto roster = opt_strings("roster");

    auto [it, inserted] = groups.try_emplace(conv_id);
    if (inserted) {
      order.push_back(conv_id);
      it->second.source = source;
    }
    it->second.lines.push_back(std::move(raw));
    if (roster) it->second.roster.insert(it->second.roster.end(), roster->begin(), roster->end());
  }

  std::vector<Conversation> out;
  for (const auto& id : order) {
    const auto& g = groups.at(id);
    out.push_back(detail::assemble(id, g.source, g.lines, g.roster, aliases));
    require_valid(out.back(), {.allow_empty_text = true});
  }
  return out;
}

namespace detail {

inline RawTranscriptLine parse_plaintext_line(std::string_view line, std::size_t line_no) {
  const auto colon = line.find(':');
  if (colon == std::string_view::npos)
    throw Error("NoColonDelimiter", "line " + std::to_string(line_no) + ": expected 'Name: text'", {{"line_no", line_no}});
  const auto name = text::normalize(line.substr(0, colon));
  if (name.empty())
    throw Error("NoColonDelimiter", "line " + std::to_string(line_no) + ": empty speaker name", {{"line_no", line_no}});
  return {name, std::string(text::trim(line.substr(colon + 1))), std::nullopt, std::nullopt, std::nullopt};
}

}  // namespace detail

// "Name: text" lines into a single conversation; blank lines are ignored.
// The roster is not required to hold two speakers here (a one-line excerpt
// is a valid parse); extraction-side validation enforces that.
inline Conversation parse_plaintext(std::istream& in, std::string conv_id = "plaintext", std::string source = "plaintext",
                                    const AliasMap& aliases = {}) {
  std::vector<RawTranscriptLine> lines;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    lines.push_back(detail::parse_plaintext_line(line, line_no));
  }
  if (lines.empty()) throw Error("EmptyConversation", "no utterances in plaintext input");
  return detail::assemble(std::move(conv_id), std::move(source), lines, {}, aliases);
}

// Multi-conversation plaintext: a blank line separates conversations. A single
// block keeps `conv_id` verbatim; otherwise blocks are named conv_id#1, #2, ...
inline std::vector<Conversation> parse_plaintext_documents(std::istream& in, const std::string& conv_id = "plaintext",
                                                           const std::string& source = "plaintext",
                                                           const AliasMap& aliases = {}) {
  std::vector<std::vector<RawTranscriptLine>> blocks(1);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) {
      if (!blocks.back().empty()) blocks.emplace_back();
      continue;
    }
    blocks.back().push_back(detail::parse_plaintext_line(line, line_no));
  }
  if (blocks.back().empty()) blocks.pop_back();
  if (blocks.empty()) throw Error("EmptyConversation", "no utterances in plaintext input");
  std::vector<Conversation> out;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string id = blocks.size() == 1 ? conv_id : conv_id + "#" + std::to_string(i + 1);
    out.push_back(detail::assemble(id, source, blocks[i], {}, aliases));
  }
  return out;
}

// True iff every whitespace token, with leading/trailing punctuation removed
// and lowercased, is in the lexicon. Tokens that are pure punctuation are
// ignored, so "" and "..." count as filler.
inline bool is_filler_only(std::string_view normalized_text, const FillerLexicon& lexicon) {
  for (auto tok : text::split_whitespace(normalized_text)) {
    const std::string core = text::to_lower_ascii(text::strip_edge_punctuation(tok));
    if (core.empty()) continue;
    if (!lexicon.contains(core)) return false;
  }
  return true;
}

// Fewer than 3 Unicode scalar values once all P* characters are removed.
inline bool is_too_short(std::string_view normalized_text) {
  return text::codepoint_count(text::strip_punctuation(normalized_text)) < 3;
}

// Drops empty, filler-only and too-short utterances (checked in that order,
// each drop counted once) and re-indexes the survivors stably.
inline std::pair<Conversation, FilterReport> filter_utterances(const Conversation& conv, const FillerLexicon& lexicon) {
  FilterReport report;
  report.input = conv.utterances.size();
  Conversation out{conv.conv_id, conv.source, conv.roster, {}};
  for (const auto& u : conv.utterances) {
    const std::string t = text::normalize(u.text);
    if (t.empty()) {
      ++report.dropped_empty;
    } else if (is_filler_only(t, lexicon)) {
      ++report.dropped_filler;
    } else if (is_too_short(t)) {
      ++report.dropped_short;
    } else {
      Utterance kept = u;
      kept.text = t;
      kept.index = out.utterances.size();
      out.utterances.push_back(std::move(kept));
    }
  }
  report.kept = out.utterances.size();
  if (out.utterances.empty())
    throw Error("EmptyConversation", "every utterance of '" + conv.conv_id + "' was filtered out",
                {{"conv_id", conv.conv_id}, {"input", report.input}});
  return {std::move(out), report};
}

}  // namespace turntake::ingest
