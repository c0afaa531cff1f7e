#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <sstream>
#include <thread>

#include "support.hpp"
#include "turntake/backends.hpp"
#include "turntake/dataset.hpp"
#include "turntake/extract.hpp"
#include "turntake/io.hpp"

using namespace turntake;
using namespace turntake::backends;
using testsupport::make_conv;

TEST(Io, ConversationRoundTrip) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    auto c = testsupport::random_conversation(rng, "c" + std::to_string(i));
    c.utterances[0].start_s = 0.5;
    c.utterances[0].end_s = 1.25;
    c.roster[0] = make_speaker(c.roster[0].id, "Display Name", {"nick"});
    const auto back = io::conversation_from_json(nlohmann::json::parse(io::to_json(c).dump()));
    EXPECT_EQ(back.conv_id, c.conv_id);
    EXPECT_EQ(back.roster, c.roster);
    EXPECT_EQ(back.utterances, c.utterances);
  }
}

TEST(Io, DecisionPointRoundTrip) {
  const DecisionPoint dp("id1", "c", 3, "A", Decision::Silent, Category::S2, Split::Test);
  EXPECT_EQ(io::decision_point_from_json(io::to_json(dp)), dp);
  const DecisionPoint no_split("id2", "c", 3, "A", Decision::Speak, Category::I1);
  EXPECT_EQ(io::decision_point_from_json(io::to_json(no_split)), no_split);
}

TEST(Io, DecisionPointRejectsMismatch) {
  auto j = io::to_json(DecisionPoint("id1", "c", 3, "A", Decision::Silent, Category::S2));
  j["category"] = "I1";
  try {
    io::decision_point_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "CategoryLabelMismatch");
  }
}

TEST(Io, SftRoundTrip) {
  dataset::SftExample e{"d", prompting::Mode::ReasoningWithDecision, "prompt\ntext", "<decision>SPEAK</decision>",
                        Category::I2};
  const auto back = io::sft_example_from_json(io::to_json(e));
  EXPECT_EQ(back.dp_id, e.dp_id);
  EXPECT_EQ(back.mode, e.mode);
  EXPECT_EQ(back.prompt, e.prompt);
  EXPECT_EQ(back.completion, e.completion);
  EXPECT_EQ(back.category, e.category);
}

TEST(Io, JsonlErrorsCarryLineNumbers) {
  std::istringstream in("{\"conv_id\":\"x\"}\n");
  try {
    io::read_conversations(in);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.details()["line_no"], 1);
  }
  std::istringstream bad("\n{oops\n");
  try {
    io::read_decision_points(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "MalformedRecord");
    EXPECT_EQ(e.details()["line_no"], 2);
  }
}

TEST(Io, AtomicWriteReplaces) {
  const auto dir = testsupport::temp_dir("atomic");
  const auto p = dir / "out.txt";
  io::write_file_atomic(p, "one");
  io::write_file_atomic(p, "two");
  EXPECT_EQ(io::read_file(p), "two");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 1u);
  EXPECT_THROW(io::read_file(dir / "missing"), Error);
}

TEST(RuleBased, ReferenceScenes) {
  std::map<std::string, Decision> expect = {{"i1_explicit_address.txt", Decision::Speak},
                                            {"s2_referenced_not_addressed.txt", Decision::Speak},
                                            {"s1_no_reference.txt", Decision::Silent},
                                            {"i2_contextual_intervention.txt", Decision::Silent}};
  for (const auto& e : testsupport::scene_expectations()) {
    const auto conv = testsupport::load_scene(e.file);
    const DecisionQuery q{"q", conv.conv_id, e.current_index, e.target};
    const auto out = decide_rule_based(q, conv);
    EXPECT_EQ(out.decision, expect.at(e.file)) << e.file;
    EXPECT_EQ(out.validity, prompting::Validity::WellFormed);
    EXPECT_EQ(prompting::parse_output(out.raw), out);
  }
}

TEST(Replay, LookupAndMissing) {
  std::istringstream in(R"({"dp_id":"a","raw":"<decision>SILENT</decision>"})"
                        "\n");
  const auto table = read_replay(in);
  EXPECT_EQ(decide_replay("a", table).decision, Decision::Silent);
  try {
    decide_replay("b", table);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "MissingReplayEntry");
  }
}

TEST(Distill, RequestCarriesLabelAndConstraint) {
  const auto conv = testsupport::load_scene("i1_explicit_address.txt");
  const DecisionPoint speak("d", conv.conv_id, 2, "Joey", Decision::Speak, Category::I1);
  const auto r = build_distillation_request(speak, conv, {});
  EXPECT_NE(r.user.find("ground-truth decision for Speaker Joey at this point is SPEAK"), std::string::npos);
  EXPECT_NE(r.user.find("exactly one sentence"), std::string::npos);
  EXPECT_EQ(r.text(), build_distillation_request(speak, conv, {}).text());
  EXPECT_EQ(r.system, prompting::render(speak, conv, {}).system_message());

  const auto s2conv = testsupport::load_scene("s2_referenced_not_addressed.txt");
  const DecisionPoint silent("e", s2conv.conv_id, 7, "Joey", Decision::Silent, Category::S2);
  EXPECT_NE(build_distillation_request(silent, s2conv, {}).user.find("is SILENT"), std::string::npos);
}

TEST(Trace, Verdicts) {
  EXPECT_EQ(validate_trace("Monica directly addresses Joey and asks him a question.", Decision::Speak),
            (TraceVerdict{true, ""}));
  EXPECT_EQ(validate_trace("Joey should stay silent here.", Decision::Speak), (TraceVerdict{false, "contradiction"}));
  EXPECT_EQ(validate_trace("", Decision::Speak), (TraceVerdict{false, "empty"}));
  EXPECT_EQ(validate_trace("One. Two.", Decision::Silent), (TraceVerdict{false, "too_many_sentences"}));
  EXPECT_EQ(validate_trace("Dr. Green asked Ross, e.g. about the couch.", Decision::Silent), (TraceVerdict{true, ""}));
  EXPECT_EQ(validate_trace("He should not stay silent since he was asked.", Decision::Speak), (TraceVerdict{true, ""}));
  EXPECT_EQ(validate_trace("The answer is SPEAK.", Decision::Silent), (TraceVerdict{false, "contradiction"}));
  EXPECT_EQ(validate_trace("Phoebe is a bystander, so she should start talking.", Decision::Silent).reason,
            "contradiction");
}

TEST(Trace, SentenceCounting) {
  EXPECT_EQ(count_sentences("One sentence only"), 1u);
  EXPECT_EQ(count_sentences("Wait... what?! Really."), 3u);
  EXPECT_EQ(count_sentences("It costs 3.50 dollars."), 1u);
  EXPECT_EQ(extract_teacher_trace("junk <reasoning> He was asked. </reasoning>"), "He was asked.");
}

TEST(Predictions, JsonRoundTrip) {
  PredictionRecord r{"d", "b", prompting::parse_output("<decision>SPEAK</decision><confidence>medium</confidence>"), 1.5,
                     "h", "2026-01-01T00:00:00Z"};
  const auto back = prediction_from_json(to_json(r));
  EXPECT_EQ(back.output, r.output);
  EXPECT_EQ(back.created_at, r.created_at);
  EXPECT_EQ(prediction_from_json({{"dp_id", "x"}, {"decision", "SILENT"}}).output.decision, Decision::Silent);
  EXPECT_EQ(prediction_from_json({{"dp_id", "x"}, {"decision", nullptr}}).output.validity, prompting::Validity::Invalid);
  EXPECT_THROW(prediction_from_json({{"dp_id", "x"}}), Error);
}

namespace {

// Finishes out of order: later points complete first.
class SlowFirstBackend final : public Backend {
 public:
  const std::string& id() const override { return id_; }
  bool deterministic() const override { return false; }
  ModelOutput decide(const DecisionContext& ctx) override {
    const int in = ++in_flight_;
    max_in_flight_ = std::max(max_in_flight_.load(), in);
    std::this_thread::sleep_for(std::chrono::milliseconds(ctx.query.boundary_t == 1 ? 30 : 1));
    --in_flight_;
    return decide_rule_based(ctx.query, ctx.conversation);
  }
  std::atomic<int> in_flight_{0};
  std::atomic<int> max_in_flight_{0};
  std::string id_ = "slow";
};

class FailingBackend final : public Backend {
 public:
  const std::string& id() const override { return id_; }
  bool deterministic() const override { return true; }
  ModelOutput decide(const DecisionContext&) override { throw Error("NetworkError", "down"); }
  std::string id_ = "fail";
};

}  // namespace

TEST(Evaluate, OrderPreservedUnderConcurrency) {
  std::mt19937_64 rng(8);
  std::vector<Conversation> convs;
  for (int i = 0; i < 5; ++i) convs.push_back(testsupport::random_conversation(rng, "c" + std::to_string(i), 4, 12));
  const auto pts = extract::extract_all(convs);
  SlowFirstBackend slow;
  EvalOptions opts;
  opts.concurrency = 4;
  const auto recs = evaluate(pts, ConversationIndex(convs), slow, opts);
  ASSERT_EQ(recs.size(), pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    EXPECT_EQ(recs[i].dp_id, pts[i].dp_id());
    EXPECT_TRUE(recs[i].created_at);
  }
  EXPECT_LE(slow.max_in_flight_.load(), 4);
  EXPECT_GE(slow.max_in_flight_.load(), 2);
}

TEST(Evaluate, DeterministicBackendsAreReproducible) {
  std::mt19937_64 rng(8);
  std::vector<Conversation> convs = {testsupport::random_conversation(rng, "a", 4, 12),
                                     testsupport::random_conversation(rng, "b", 4, 12)};
  const auto pts = extract::extract_all(convs);
  RuleBasedBackend rule;
  EvalOptions opts;
  opts.concurrency = 3;
  auto dump = [&] {
    std::string s;
    for (const auto& r : evaluate(pts, ConversationIndex(convs), rule, opts)) s += to_json(r).dump() + "\n";
    return s;
  };
  EXPECT_EQ(dump(), dump());
}

TEST(Evaluate, FirstErrorAborts) {
  const auto conv = make_conv("c", {{"A", "first turn"}, {"B", "second turn"}, {"A", "third turn"}});
  std::vector<Conversation> convs = {conv};
  FailingBackend fail;
  try {
    evaluate(extract::extract_all(convs), ConversationIndex(convs), fail, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "NetworkError");
  }
}

TEST(BackendConfig, Validation) {
  BackendConfig c;
  c.kind = BackendKind::RemoteChat;
  EXPECT_THROW(c.validate(), Error);
  c.endpoint_url = "http://localhost:1/v1/chat/completions";
  c.model_name = "m";
  EXPECT_NO_THROW(c.validate());
  c.max_retries = -1;
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(parse_backend_kind("replay"), BackendKind::Replay);
  EXPECT_THROW(parse_backend_kind("gpt"), Error);
}
