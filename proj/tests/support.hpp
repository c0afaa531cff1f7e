#pragma once

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "turntake/core.hpp"
#include "turntake/extract.hpp"
#include "turntake/ingest.hpp"
#include "turntake/io.hpp"

namespace testsupport {

using namespace turntake;

inline std::filesystem::path source_dir() { return TURNTAKE_SOURCE_DIR; }
inline std::filesystem::path fixture(const std::string& rel) { return source_dir() / "tests" / "fixtures" / rel; }

// Conversation from ("Speaker", "text") pairs; roster in first-appearance order
// plus any `extra` speakers.
inline Conversation make_conv(const std::string& id, const std::vector<std::pair<std::string, std::string>>& lines,
                              const std::vector<std::string>& extra = {}) {
  Conversation c{id, "test", {}, {}};
  auto ensure = [&](const std::string& s) {
    if (!c.find_speaker(s)) c.roster.push_back(make_speaker(s));
  };
  for (const auto& [s, t] : lines) {
    ensure(s);
    c.utterances.push_back({c.utterances.size(), s, t, std::nullopt, std::nullopt, std::nullopt});
  }
  for (const auto& s : extra) ensure(s);
  return c;
}

inline const std::vector<std::string>& name_pool() {
  static const std::vector<std::string> names = {"Ana", "Ben", "Cora", "Dev", "Eli"};
  return names;
}

// Random valid conversation: 2..max_speakers roster, 1..max_utts turns. Texts
// sometimes name another roster member; some utterances carry addressees.
inline Conversation random_conversation(std::mt19937_64& rng, const std::string& id, std::size_t max_speakers = 5,
                                        std::size_t max_utts = 20, bool annotations = true) {
  std::uniform_int_distribution<std::size_t> n_spk(2, max_speakers), n_utt(1, max_utts);
  const std::size_t k = n_spk(rng);
  Conversation c{id, "synthetic", {}, {}};
  for (std::size_t i = 0; i < k; ++i) c.roster.push_back(make_speaker(name_pool()[i]));
  const std::size_t n = n_utt(rng);
  std::uniform_int_distribution<std::size_t> who(0, k - 1);
  std::bernoulli_distribution coin(0.35), annotate(annotations ? 0.2 : 0.0);
  static const char* const kFiller[] = {"what do you think", "that is fine", "maybe later", "I disagree", "let us go"};
  std::uniform_int_distribution<int> phrase(0, 4);
  for (std::size_t i = 0; i < n; ++i) {
    Utterance u;
    u.index = i;
    u.speaker = c.roster[who(rng)].id;
    u.text = kFiller[phrase(rng)];
    if (coin(rng)) u.text = c.roster[who(rng)].display_name + ", " + u.text;
    if (annotate(rng)) u.addressees = std::vector<std::string>{c.roster[who(rng)].id};
    c.utterances.push_back(std::move(u));
  }
  return c;
}

inline std::string slurp(const std::filesystem::path& p) { return io::read_file(p); }

inline std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("turntake_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

// Hand-annotated scene fixtures: (file, current index, target, category, decision).
struct SceneExpectation {
  std::string file;
  std::size_t current_index;
  std::string target;
  Category category;
  Decision decision;
};

inline std::vector<SceneExpectation> scene_expectations() {
  std::vector<SceneExpectation> out;
  const auto j = nlohmann::json::parse(io::read_file(fixture("scenes/expected.json")));
  for (const auto& e : j)
    out.push_back({e["file"], e["current_index"], e["target"], *parse_category(e["category"].get<std::string>()),
                   *parse_decision(e["decision"].get<std::string>())});
  return out;
}

inline Conversation load_scene(const std::string& file) {
  auto in = io::open_input(fixture("scenes/" + file));
  auto conv = ingest::parse_plaintext(in, std::filesystem::path(file).stem().string());
  auto [filtered, report] = ingest::filter_utterances(conv, ingest::default_filler_lexicon());
  (void)report;
  return filtered;
}

}  // namespace testsupport
