// Acceptance checks. One PASS/FAIL line per criterion; exit status is the
// number of failing criteria (capped at 1).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include <httplib.h>

#include "support.hpp"
#include "turntake/backends.hpp"
#include "turntake/dataset.hpp"
#include "turntake/metrics.hpp"
#include "turntake/service.hpp"

using namespace turntake;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, const std::function<Outcome()>& check) {
  Outcome o;
  try {
    o = check();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  if (!o.pass) ++failures;
  std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Every report the suite emits passes through here.
std::size_t reports_checked = 0;
std::size_t identity_violations = 0;

void check_identities(const metrics::MetricsReport& r) {
  ++reports_checked;
  if (std::abs(r.f1_avg - (r.f1_speak + r.f1_silent) / 2.0) > 1e-12 ||
      std::abs(r.bal_acc - (r.recall_speak + r.recall_silent) / 2.0) > 1e-12)
    ++identity_violations;
}

prompting::ModelOutput output_for(std::optional<Decision> d, bool fallback) {
  prompting::ModelOutput o;
  o.decision = d;
  o.validity = !d ? prompting::Validity::Invalid
                  : (fallback ? prompting::Validity::FallbackParsed : prompting::Validity::WellFormed);
  return o;
}

// ---- metrics oracle --------------------------------------------------------

Outcome metrics_oracle() {
  std::mt19937_64 rng(20240601);
  const auto t0 = Clock::now();
  double worst = 0;
  for (int set = 0; set < 1000; ++set) {
    const std::size_t n = 1 + rng() % 1000;
    std::vector<int> label(n), pred(n);  // 1 speak, 0 silent, -1 invalid
    std::vector<std::pair<Decision, prompting::ModelOutput>> pairs;
    std::vector<Category> cats;
    for (std::size_t i = 0; i < n; ++i) {
      label[i] = static_cast<int>(rng() % 2);
      const auto r = rng() % 10;
      pred[i] = r == 0 ? -1 : static_cast<int>(r % 2);
      const Decision l = label[i] ? Decision::Speak : Decision::Silent;
      const std::optional<Decision> p =
          pred[i] < 0 ? std::nullopt : std::optional<Decision>(pred[i] ? Decision::Speak : Decision::Silent);
      pairs.emplace_back(l, output_for(p, rng() % 4 == 0));
      cats.push_back(l == Decision::Speak ? (rng() % 2 ? Category::I1 : Category::I2)
                                          : (rng() % 2 ? Category::S1 : Category::S2));
    }
    // Brute force: tabulate, then apply the textbook formulas.
    double tp = 0, fn = 0, fp = 0, tn = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int eff = pred[i] < 0 ? 1 - label[i] : pred[i];
      if (label[i] == 1 && eff == 1) tp += 1;
      if (label[i] == 1 && eff == 0) fn += 1;
      if (label[i] == 0 && eff == 1) fp += 1;
      if (label[i] == 0 && eff == 0) tn += 1;
    }
    auto div = [](double a, double b) { return b == 0 ? 0.0 : a / b; };
    auto harm = [](double p, double r) { return p + r == 0 ? 0.0 : 2 * p * r / (p + r); };
    const double acc = (tp + tn) / static_cast<double>(n);
    const double ps = div(tp, tp + fp), rs = div(tp, tp + fn);
    const double pq = div(tn, tn + fn), rq = div(tn, tn + fp);
    const double f1s = harm(ps, rs), f1q = harm(pq, rq);

    const auto r = metrics::score(pairs, cats);
    check_identities(r);
    for (double d : {r.acc - acc, r.f1_speak - f1s, r.f1_silent - f1q, r.f1_avg - (f1s + f1q) / 2,
                     r.bal_acc - (rs + rq) / 2})
      worst = std::max(worst, std::abs(d));
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-12 && secs < 10.0, fmt("1000 sets, max |diff| %.3g (tol 1e-12), %.2fs (limit 10s)", worst, secs)};
}

// ---- published arithmetic --------------------------------------------------

Outcome published_arithmetic() {
  const double kappa_mean = (0.57 + 0.38 + 0.53) / 3.0;
  const bool kappa_ok = std::abs(kappa_mean - 0.492) <= 0.001;
  const metrics::MetricsReport a = [] {
    std::vector<metrics::MetricsReport> rs(3);
    rs[0].acc = 0.6639;
    rs[1].acc = 0.6222;
    rs[2].acc = 0.6833;
    return metrics::aggregate_reports(rs);
  }();
  const double table4 = a.acc * 100.0;
  const bool table4_ok = std::abs(table4 - 65.65) <= 0.01;
  const bool ident_ok = identity_violations == 0 && reports_checked > 0;
  return {kappa_ok && table4_ok && ident_ok,
          fmt("kappa mean %.5f vs 0.492+-0.001 %s; accuracy mean %.4f vs 65.65+-0.01 %s; identities on %zu reports %s",
              kappa_mean, kappa_ok ? "ok" : "OUT OF TOLERANCE", table4, table4_ok ? "ok" : "OUT OF TOLERANCE",
              reports_checked, ident_ok ? "ok" : "VIOLATED")};
}

// The same kappa target measured on three synthetic annotator files whose
// pairwise values round to the published ones.
Outcome kappa_from_annotators() {
  std::vector<std::vector<Decision>> raters;
  for (const char* f : {"h1.jsonl", "h2.jsonl", "h3.jsonl"}) {
    std::map<std::string, Decision> by_id;
    std::istringstream in(io::read_file(testsupport::fixture(std::string("annotators/") + f)));
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) {
        const auto j = nlohmann::json::parse(line);
        by_id[j["dp_id"]] = *parse_decision(j["label"].get<std::string>());
      }
    std::vector<Decision> v;
    for (const auto& [id, d] : by_id) v.push_back(d);
    raters.push_back(std::move(v));
  }
  const double k12 = metrics::cohen_kappa(raters[0], raters[1]);
  const double k13 = metrics::cohen_kappa(raters[0], raters[2]);
  const double k23 = metrics::cohen_kappa(raters[1], raters[2]);
  const double mean = (k12 + k13 + k23) / 3.0;
  auto r2 = [](double x) { return std::round(x * 100.0) / 100.0; };
  const bool ok = std::abs(mean - 0.492) <= 0.001 && r2(k12) == 0.57 && r2(k13) == 0.38 && r2(k23) == 0.53;
  return {ok, fmt("pairwise %.4f %.4f %.4f, mean %.5f vs 0.492+-0.001", k12, k13, k23, mean)};
}

// ---- extraction oracle -----------------------------------------------------

Outcome extraction_oracle() {
  std::mt19937_64 rng(77);
  std::vector<Conversation> convs;
  for (int i = 0; i < 500; ++i) convs.push_back(testsupport::random_conversation(rng, "syn" + std::to_string(i), 5, 20));
  const auto t0 = Clock::now();
  std::size_t mismatched = 0, total = 0;
  for (const auto& c : convs) {
    using Key = std::tuple<std::size_t, std::string, bool>;
    std::set<Key> expect, got;
    const auto& us = c.utterances;
    for (std::size_t t = 1; t + 1 < us.size(); ++t)
      for (const auto& s : c.roster)
        if (s.id != us[t].speaker) expect.emplace(t, s.id, us[t + 1].speaker == s.id);
    const auto pts = extract::extract_decision_points(c);
    for (const auto& p : pts) got.emplace(p.boundary_t(), p.target(), p.label() == Decision::Speak);
    total += expect.size();
    if (got != expect || pts.size() != expect.size()) ++mismatched;
  }
  const double secs = seconds_since(t0);
  return {mismatched == 0 && secs < 5.0,
          fmt("500 conversations, %zu points, %zu mismatched conversations, %.2fs (limit 5s)", total, mismatched, secs)};
}

// ---- reference scenes --------------------------------------------------------

Outcome reference_scenes() {
  std::string detail;
  bool ok = true;
  for (const auto& e : testsupport::scene_expectations()) {
    auto in = io::open_input(testsupport::fixture("scenes/" + e.file));
    const auto raw = ingest::parse_plaintext(in, std::filesystem::path(e.file).stem().string());
    const auto [conv, rep] = ingest::filter_utterances(raw, ingest::default_filler_lexicon());
    std::optional<DecisionPoint> hit;
    for (const auto& p : extract::extract_decision_points(conv))
      if (p.boundary_t() == e.current_index && p.target() == e.target) hit = p;
    const bool match = hit && hit->category() == e.category && hit->label() == e.decision;
    ok = ok && match;
    if (!detail.empty()) detail += ", ";
    detail += hit ? std::string(to_string(hit->category())) + "/" + std::string(to_string(hit->label())) : "missing";
    if (!match) detail += "(expected " + std::string(to_string(e.category)) + ")";
  }
  return {ok, detail};
}

// ---- split law -------------------------------------------------------------

Outcome split_law() {
  std::vector<std::size_t> sizes;
  for (std::size_t n = 1; n <= 200; ++n) sizes.push_back(n);
  sizes.push_back(1598);
  std::size_t bad = 0;
  for (std::size_t n : sizes) {
    // Category under test gets n; the others vary so categories interact.
    const std::array<std::size_t, 4> counts = {n, 1 + (n * 7) % 23, 1 + (n * 13) % 31, 1 + (n * 5) % 17};
    std::vector<DecisionPoint> pts;
    for (auto cat : kAllCategories)
      for (std::size_t i = 0; i < counts[category_index(cat)]; ++i)
        pts.emplace_back(std::string(to_string(cat)) + "-" + std::to_string(i), "c", 1, "A", label_of(cat), cat);
    dataset::SplitSpec spec;
    spec.seed = n;
    const auto a = dataset::split_per_category(pts, spec);
    const auto b = dataset::split_per_category(pts, spec);
    bool ok = a == b && a.size() == pts.size();
    std::set<std::string> ids_in, ids_out;
    for (const auto& p : pts) ids_in.insert(p.dp_id());
    std::map<std::pair<Category, Split>, std::size_t> tally;
    for (const auto& p : a) {
      ok = ok && p.split().has_value() && ids_out.insert(p.dp_id()).second;
      if (p.split()) ++tally[{p.category(), *p.split()}];
    }
    ok = ok && ids_in == ids_out;
    for (auto cat : kAllCategories) {
      const std::size_t c = counts[category_index(cat)];
      const std::size_t tenth = c / 10;
      ok = ok && tally[{cat, Split::Val}] == tenth && tally[{cat, Split::Test}] == tenth &&
           tally[{cat, Split::Train}] == c - 2 * tenth;
    }
    if (!ok) ++bad;
  }
  const auto s = dataset::split_sizes(1598, {});
  const bool ok1598 = s.train == 1280 && s.val == 159 && s.test == 159;
  return {bad == 0 && ok1598,
          fmt("%zu sizes checked, %zu violations; 1598 -> %zu/%zu/%zu", sizes.size(), bad, s.train, s.val, s.test)};
}

// ---- sampler law -----------------------------------------------------------

Outcome sampler_law() {
  std::mt19937_64 rng(32);
  std::size_t bad_batches = 0, batches = 0;
  for (int plan_no = 0; plan_no < 100; ++plan_no) {
    std::vector<DecisionPoint> pts;
    std::map<std::string, Category> cat_of;
    for (auto cat : kAllCategories) {
      const std::size_t c = 1 + rng() % 120;
      for (std::size_t i = 0; i < c; ++i) {
        pts.emplace_back(std::string(to_string(cat)) + std::to_string(i), "c", 1, "A", label_of(cat), cat);
        cat_of[pts.back().dp_id()] = cat;
      }
    }
    std::shuffle(pts.begin(), pts.end(), rng);
    const auto plan = dataset::balanced_batches(pts, 32, rng(), 1 + rng() % 3);
    for (const auto& b : plan.batches) {
      ++batches;
      std::array<std::size_t, 4> n{};
      for (const auto& id : b) ++n[category_index(cat_of.at(id))];
      if (b.size() != 32 || n != std::array<std::size_t, 4>{8, 8, 8, 8}) ++bad_batches;
    }
  }
  return {bad_batches == 0 && batches > 0, fmt("100 plans, %zu batches, %zu not 8/8/8/8", batches, bad_batches)};
}

// ---- truncation law --------------------------------------------------------

Outcome truncation_law() {
  std::mt19937_64 rng(2048);
  std::size_t bad = 0, too_small = 0;
  for (int inst = 0; inst < 1000; ++inst) {
    const std::size_t turns = 2 + rng() % 19;
    Conversation c{"tr", "synthetic", {make_speaker("Ana"), make_speaker("Ben")}, {}};
    std::vector<std::size_t> tokens;  // whitespace tokens of each rendered line
    for (std::size_t i = 0; i < turns; ++i) {
      const std::size_t words = 1 + rng() % 30;
      std::string text;
      for (std::size_t w = 0; w < words; ++w) text += (w ? " w" : "w") + std::to_string(w);
      c.utterances.push_back({i, i % 2 ? "Ben" : "Ana", text, std::nullopt, std::nullopt, std::nullopt});
      // "Name:" plus the words; the current line also carries two marker tokens.
      tokens.push_back(words + 1 + (i + 1 == turns ? 2 : 0));
    }
    const std::size_t budget = 1 + rng() % 200;
    // Brute force: largest k whose trailing k turns fit.
    std::optional<std::size_t> expect;
    for (std::size_t k = turns; k >= 1 && !expect; --k) {
      std::size_t sum = 0;
      for (std::size_t i = turns - k; i < turns; ++i) sum += tokens[i];
      if (sum <= budget) expect = k;
    }
    prompting::PromptConfig cfg;
    cfg.token_budget = budget;
    cfg.budget_scope = prompting::BudgetScope::ContextOnly;
    const DecisionQuery q{"q", "tr", turns - 1, "Ana"};
    try {
      const auto b = prompting::render(q, c, cfg);
      if (!expect || turns - b.first_context_index != *expect || b.token_count > budget) ++bad;
      const std::size_t direct = prompting::truncate_context(tokens, budget);
      if (direct != *expect) ++bad;
    } catch (const Error& e) {
      if (e.code() != "BudgetTooSmall" || expect) ++bad;
      ++too_small;
    }
  }
  return {bad == 0, fmt("1000 instances (%zu with current turn over budget), %zu mismatches", too_small, bad)};
}

// ---- round trips -----------------------------------------------------------

Outcome round_trips() {
  std::mt19937_64 rng(10000);
  std::vector<Conversation> convs;
  std::vector<DecisionPoint> pts;
  for (int i = 0; pts.size() < 10000; ++i) {
    convs.push_back(testsupport::random_conversation(rng, "rt" + std::to_string(i), 5, 20));
    for (auto& p : extract::extract_decision_points(convs.back())) pts.push_back(std::move(p));
  }
  pts.erase(pts.begin() + 10000, pts.end());
  const ConversationIndex idx(convs);

  const std::vector<DecisionPoint> first(pts.begin(), pts.begin() + 5000), second(pts.begin() + 5000, pts.end());
  dataset::ReasoningLookup traces;
  for (const auto& p : second) traces[p.dp_id()] = "The floor is with the participants named in the last line.";
  prompting::PromptConfig rcfg;
  rcfg.mode = prompting::Mode::ReasoningWithDecision;
  auto ex = dataset::export_sft(first, idx, {});
  for (auto& e : dataset::export_sft(second, idx, rcfg, &traces)) ex.push_back(std::move(e));
  std::map<std::string, Decision> truth;
  for (const auto& p : pts) truth[p.dp_id()] = p.label();
  std::size_t recovered = 0;
  for (const auto& e : ex) {
    const auto back = io::sft_example_from_json(nlohmann::json::parse(io::to_json(e).dump()));
    const auto out = prompting::parse_output(back.completion);
    if (out.validity == prompting::Validity::WellFormed && out.decision == truth.at(back.dp_id)) ++recovered;
  }

  // Replay: canned raw outputs, evaluated twice with concurrency.
  backends::ReplayTable table;
  std::vector<DecisionPoint> sample(pts.begin(), pts.begin() + 2000);
  for (const auto& p : sample) table[p.dp_id()] = backends::decide_rule_based(query_of(p), idx.resolve(p)).raw;
  backends::ReplayBackend replay(table);
  backends::EvalOptions opts;
  opts.concurrency = 4;
  auto run = [&] {
    std::string s;
    for (const auto& r : backends::evaluate(sample, idx, replay, opts)) s += backends::to_json(r).dump() + "\n";
    return s;
  };
  const bool identical = run() == run();
  return {recovered == ex.size() && ex.size() == 10000 && identical,
          fmt("SFT export recovered %zu/%zu labels; replay evaluation of %zu points %s", recovered, ex.size(),
              sample.size(), identical ? "byte-identical" : "DIFFERS")};
}

// ---- baseline self-test ----------------------------------------------------

Outcome baseline_self_test() {
  std::mt19937_64 rng(5);
  std::size_t datasets_bad = 0;
  double worst_recompose = 0;
  for (int d = 0; d < 20; ++d) {
    std::vector<Conversation> convs;
    for (int i = 0; i < 60; ++i)
      convs.push_back(testsupport::random_conversation(rng, "b" + std::to_string(i), 5, 20, false));
    const auto pts = extract::extract_all(convs);
    const ConversationIndex idx(convs);
    backends::RuleBasedBackend rule;
    const auto recs = backends::evaluate(pts, idx, rule, {});
    std::vector<std::pair<Decision, prompting::ModelOutput>> pairs;
    std::vector<Category> cats;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      pairs.emplace_back(pts[i].label(), recs[i].output);
      cats.push_back(pts[i].category());
    }
    const auto r = metrics::score(pairs, cats);
    check_identities(r);
    auto acc = [&](Category c) { return r.per_category_acc.count(c) ? r.per_category_acc.at(c) : 0.0; };
    auto n = [&](Category c) { return r.per_category_n.count(c) ? static_cast<double>(r.per_category_n.at(c)) : 0.0; };
    if (!r.per_category_acc.count(Category::I1) || !r.per_category_acc.count(Category::S2) ||
        acc(Category::I1) != 1.0 || acc(Category::S2) != 0.0)
      ++datasets_bad;
    const double rec_speak =
        (acc(Category::I1) * n(Category::I1) + acc(Category::I2) * n(Category::I2)) / (n(Category::I1) + n(Category::I2));
    const double rec_silent =
        (acc(Category::S1) * n(Category::S1) + acc(Category::S2) * n(Category::S2)) / (n(Category::S1) + n(Category::S2));
    worst_recompose = std::max(worst_recompose, std::abs(r.bal_acc - (rec_speak + rec_silent) / 2.0));
  }
  return {datasets_bad == 0 && worst_recompose <= 1e-12,
          fmt("20 datasets, %zu without I1=100%%/S2=0%%, BalAcc recomposition max |diff| %.3g", datasets_bad,
              worst_recompose)};
}

// ---- service contract ------------------------------------------------------

Outcome service_contract() {
  backends::RuleBasedBackend rule;
  httplib::Server server;
  service::install_routes(server, rule, {});
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const auto conv = testsupport::load_scene("i1_explicit_address.txt");
  nlohmann::json utts = nlohmann::json::array();
  for (std::size_t i = 0; i <= 2; ++i)
    utts.push_back({{"speaker", conv.utterances[i].speaker}, {"text", conv.utterances[i].text}});
  const nlohmann::json req{{"conversation", utts}, {"target", "Joey"}};
  const nlohmann::json single{{"conversation", {utts[0]}}, {"target", "Joey"}};

  httplib::Client cli("127.0.0.1", port);
  cli.Get("/healthz");  // warm the connection path
  const auto t0 = Clock::now();
  const auto res = cli.Post("/decide", req.dump(), "application/json");
  const double ms = seconds_since(t0) * 1000.0;
  const auto res422 = cli.Post("/decide", single.dump(), "application/json");
  server.stop();
  t.join();

  if (!res || !res422) return {false, "request failed"};
  const auto body = nlohmann::json::parse(res->body);
  const bool ok = res->status == 200 && body["decision"] == "SPEAK" && body["validity"] == "well_formed" && ms < 50.0 &&
                  res422->status == 422;
  return {ok, fmt("I1 -> %d %s/%s in %.2f ms (limit 50); single utterance -> %d", res->status,
                  body.value("decision", std::string("?")).c_str(), body.value("validity", std::string("?")).c_str(), ms,
                  res422->status)};
}

}  // namespace

int main() {
  report("metrics-oracle", metrics_oracle);
  report("extraction-oracle", extraction_oracle);
  report("reference-scenes", reference_scenes);
  report("split-law", split_law);
  report("sampler-law", sampler_law);
  report("truncation-law", truncation_law);
  report("round-trips", round_trips);
  report("baseline-self-test", baseline_self_test);
  report("service-contract", service_contract);
  // Runs last so the identity check covers every report emitted above.
  report("published-arithmetic", published_arithmetic);
  report("kappa-from-annotator-fixtures (supplementary)", kappa_from_annotators);
  std::printf("%d failing\n", failures);
  return failures == 0 ? 0 : 1;
}
