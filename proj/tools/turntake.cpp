// turntake: command-line driver for building, evaluating and exporting
// turn-taking decision-point datasets.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "turntake/backends.hpp"
#include "turntake/config.hpp"
#include "turntake/core.hpp"
#include "turntake/dataset.hpp"
#include "turntake/extract.hpp"
#include "turntake/ingest.hpp"
#include "turntake/io.hpp"
#include "turntake/metrics.hpp"
#include "turntake/prompting.hpp"
#include "turntake/remote.hpp"
#include "turntake/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace turntake;

namespace {

struct Options {
  std::vector<std::string> inputs;
  std::optional<std::string> output;
  std::optional<std::string> config_path;
  std::optional<std::string> conversations;
  std::optional<std::string> points;

  // Config-backed settings; a flag overrides the config file key named in
  // apply_flags().
  std::optional<std::uint64_t> seed;
  std::optional<std::string> backend;
  std::optional<std::string> backend_id;
  std::optional<std::string> mode;
  std::optional<std::size_t> budget;
  std::optional<std::string> budget_scope;
  std::optional<int> system_repeats;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> target_n;
  std::optional<int> concurrency;
  std::optional<std::string> replay_file;
  std::optional<std::string> endpoint;
  std::optional<std::string> model;
  std::optional<std::string> cache_dir;
  std::optional<int> max_retries;
  std::optional<int> max_tokens;

  // Subcommand-specific.
  std::string format = "auto";
  std::optional<std::string> conv_id;
  std::string source = "plaintext";
  std::optional<std::string> aliases;
  std::optional<std::string> filler_lexicon;
  std::optional<std::string> split;
  std::optional<std::string> only_split;
  std::optional<std::string> ratios;
  std::optional<std::string> reasoning;
  std::optional<std::string> csv;
  std::string name = "report";
  std::size_t epochs = 1;
  std::optional<std::size_t> num_batches;
  std::string host = "127.0.0.1";
  int port = 8080;
  bool send = false;
  std::optional<std::string> traces_output;
  std::size_t max_sentences = 1;
};

Config load_config(const Options& o) {
  Config c;
  if (o.config_path) {
    auto in = io::open_input(*o.config_path);
    c = Config::parse(in);
  }
  auto put = [&](const char* key, const auto& v) {
    if (!v) return;
    if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, std::string>)
      c.set(key, *v);
    else
      c.set(key, std::to_string(*v));
  };
  put("seed", o.seed);
  put("backend", o.backend);
  put("backend_id", o.backend_id);
  put("mode", o.mode);
  put("token_budget", o.budget);
  put("budget_scope", o.budget_scope);
  put("system_repeats", o.system_repeats);
  put("batch_size", o.batch_size);
  put("target_n", o.target_n);
  put("concurrency", o.concurrency);
  put("replay_file", o.replay_file);
  put("endpoint_url", o.endpoint);
  put("model_name", o.model);
  put("cache_dir", o.cache_dir);
  put("max_retries", o.max_retries);
  put("max_tokens", o.max_tokens);
  return c;
}

prompting::PromptConfig prompt_config(const Config& c) {
  prompting::PromptConfig p;
  const long long budget = c.get_int("token_budget", 2048);
  if (budget <= 0) throw Error("SchemaViolation", "token_budget must be positive", {{"field", "token_budget"}});
  p.token_budget = static_cast<std::size_t>(budget);
  p.system_repeats = static_cast<int>(c.get_int("system_repeats", 1));
  if (p.system_repeats != 1 && p.system_repeats != 2)
    throw Error("SchemaViolation", "system_repeats must be 1 or 2", {{"field", "system_repeats"}});
  p.mode = prompting::parse_mode(c.get_or("mode", "decision_only"));
  const auto scope = c.get_or("budget_scope", "full");
  if (scope == "full")
    p.budget_scope = prompting::BudgetScope::FullInput;
  else if (scope == "context")
    p.budget_scope = prompting::BudgetScope::ContextOnly;
  else
    throw Error("SchemaViolation", "budget_scope must be 'full' or 'context'", {{"field", "budget_scope"}});
  return p;
}

std::uint64_t seed_of(const Config& c) { return static_cast<std::uint64_t>(c.get_int("seed", 0)); }

backends::BackendConfig backend_config(const Config& c) {
  backends::BackendConfig b;
  b.kind = backends::parse_backend_kind(c.get_or("backend", "rule_based"));
  b.endpoint_url = c.get("endpoint_url");
  b.model_name = c.get("model_name");
  b.temperature = c.get_double("temperature", 0.0);
  b.max_retries = static_cast<int>(c.get_int("max_retries", 3));
  b.timeout_s = c.get_double("timeout_s", 60.0);
  b.max_tokens = static_cast<int>(c.get_int("max_tokens", 256));
  b.backoff_base_ms = static_cast<int>(c.get_int("backoff_base_ms", 500));
  b.cache_dir = c.get("cache_dir");
  const std::string default_id = b.kind == backends::BackendKind::RemoteChat && b.model_name
                                     ? *b.model_name
                                     : std::string(backends::to_string(b.kind));
  b.backend_id = c.get_or("backend_id", default_id);
  b.validate();
  return b;
}

std::unique_ptr<backends::Backend> make_backend(const Config& c) {
  const auto cfg = backend_config(c);
  switch (cfg.kind) {
    case backends::BackendKind::RuleBased:
      return std::make_unique<backends::RuleBasedBackend>(cfg.backend_id);
    case backends::BackendKind::Replay: {
      const auto path = c.get("replay_file");
      if (!path) throw Error("SchemaViolation", "replay backend needs --replay-file", {{"field", "replay_file"}});
      auto in = io::open_input(*path);
      return std::make_unique<backends::ReplayBackend>(backends::read_replay(in), cfg.backend_id);
    }
    case backends::BackendKind::RemoteChat:
      return std::make_unique<backends::RemoteChatBackend>(std::make_shared<backends::ChatClient>(cfg));
  }
  throw Error("SchemaViolation", "unsupported backend", {{"field", "backend"}});
}

const std::string& single_input(const Options& o) {
  if (o.inputs.size() != 1) throw Error("UsageError", "exactly one --input is required", {{"field", "input"}});
  return o.inputs.front();
}

const std::string& required(const std::optional<std::string>& v, const char* flag) {
  if (!v) throw Error("UsageError", std::string("missing required flag --") + flag, {{"field", flag}});
  return *v;
}

std::vector<DecisionPoint> filter_split(std::vector<DecisionPoint> points, const std::optional<std::string>& split) {
  if (!split || *split == "all") return points;
  const auto s = parse_split(*split);
  if (!s) throw Error("SchemaViolation", "split must be train, val, test or all", {{"field", "split"}});
  std::vector<DecisionPoint> out;
  for (auto& p : points)
    if (p.split() == s) out.push_back(std::move(p));
  return out;
}

void emit(const Options& o, const std::string& contents) {
  if (o.output)
    io::write_file_atomic(*o.output, contents);
  else
    std::cout << contents;
}

// ---- subcommands -----------------------------------------------------------

int cmd_ingest(const Options& o) {
  if (o.inputs.empty()) throw Error("UsageError", "at least one --input is required", {{"field", "input"}});
  ingest::AliasMap aliases;
  if (o.aliases) {
    const auto j = json::parse(io::read_file(*o.aliases));
    aliases = j.get<ingest::AliasMap>();
  }
  ingest::FillerLexicon lexicon = ingest::default_filler_lexicon();
  if (o.filler_lexicon) {
    auto in = io::open_input(*o.filler_lexicon);
    lexicon = ingest::read_filler_lexicon(in);
  }

  std::vector<Conversation> parsed;
  for (const auto& path : o.inputs) {
    const fs::path p(path);
    std::string format = o.format;
    if (format == "auto") format = p.extension() == ".jsonl" ? "jsonl" : "plaintext";
    auto in = io::open_input(p);
    std::vector<Conversation> convs;
    if (format == "jsonl")
      convs = ingest::parse_jsonl(in, aliases);
    else if (format == "plaintext")
      convs = ingest::parse_plaintext_documents(in, o.conv_id.value_or(p.stem().string()), o.source, aliases);
    else
      throw Error("UsageError", "format must be auto, jsonl or plaintext", {{"field", "format"}});
    parsed.insert(parsed.end(), convs.begin(), convs.end());
  }

  std::set<std::string> ids;
  std::vector<Conversation> kept;
  ingest::FilterReport total;
  json per_conv = json::array();
  for (const auto& c : parsed) {
    if (!ids.insert(c.conv_id).second)
      throw Error("SchemaViolation", "duplicate conv_id '" + c.conv_id + "' across inputs", {{"conv_id", c.conv_id}});
    auto [filtered, report] = ingest::filter_utterances(c, lexicon);
    require_valid(filtered);
    total += report;
    per_conv.push_back({{"conv_id", c.conv_id},
                        {"kept", report.kept},
                        {"dropped_filler", report.dropped_filler},
                        {"dropped_short", report.dropped_short},
                        {"dropped_empty", report.dropped_empty}});
    kept.push_back(std::move(filtered));
  }
  emit(o, io::to_jsonl(kept));
  std::cerr << json{{"conversations", kept.size()},
                    {"input", total.input},
                    {"kept", total.kept},
                    {"dropped_filler", total.dropped_filler},
                    {"dropped_short", total.dropped_short},
                    {"dropped_empty", total.dropped_empty},
                    {"per_conversation", per_conv}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_extract(const Options& o) {
  const auto convs = io::read_conversations(single_input(o));
  emit(o, io::to_jsonl(extract::extract_all(convs)));
  return 0;
}

int cmd_dedup(const Options& o) {
  const auto convs = io::read_conversations(required(o.conversations, "conversations"));
  const auto points = io::read_decision_points(single_input(o));
  const auto out = dataset::dedup(points, ConversationIndex(convs));
  emit(o, io::to_jsonl(out));
  std::cerr << json{{"input", points.size()}, {"kept", out.size()}}.dump() << "\n";
  return 0;
}

int cmd_split(const Options& o, const Config& c) {
  dataset::SplitSpec spec;
  spec.seed = seed_of(c);
  if (o.ratios) {
    double r[3];
    if (std::sscanf(o.ratios->c_str(), "%lf,%lf,%lf", &r[0], &r[1], &r[2]) != 3)
      throw Error("UsageError", "--ratios expects train,val,test", {{"field", "ratios"}});
    spec.train = r[0];
    spec.val = r[1];
    spec.test = r[2];
  }
  const auto points = io::read_decision_points(single_input(o));
  emit(o, io::to_jsonl(dataset::split_per_category(points, spec)));
  return 0;
}

int cmd_subsample(const Options& o, const Config& c) {
  const auto target = c.get_int("target_n", -1);
  if (target < 0) throw Error("UsageError", "--target-n is required", {{"field", "target_n"}});
  const auto points = io::read_decision_points(single_input(o));
  const std::string only = o.only_split.value_or("train");
  const bool any_split = std::any_of(points.begin(), points.end(), [](const auto& p) { return p.split().has_value(); });
  std::vector<DecisionPoint> pool, rest;
  std::optional<Split> which;
  if (only != "all" && any_split) {
    which = parse_split(only);
    if (!which) throw Error("SchemaViolation", "--only-split must be train, val, test or all", {{"field", "only_split"}});
  }
  for (const auto& p : points) (!which || p.split() == which ? pool : rest).push_back(p);
  const auto sampled = dataset::stratified_subsample(pool, static_cast<std::size_t>(target), seed_of(c));
  // Keep file order: sampled points and untouched points interleaved as input.
  std::set<std::string> keep;
  for (const auto& p : sampled) keep.insert(p.dp_id());
  for (const auto& p : rest) keep.insert(p.dp_id());
  std::vector<DecisionPoint> out;
  for (const auto& p : points)
    if (keep.contains(p.dp_id())) out.push_back(p);
  emit(o, io::to_jsonl(out));
  return 0;
}

int cmd_render(const Options& o, const Config& c) {
  const auto convs = io::read_conversations(required(o.conversations, "conversations"));
  const ConversationIndex index(convs);
  const auto points = filter_split(io::read_decision_points(single_input(o)), o.split);
  const auto cfg = prompt_config(c);
  std::string out;
  for (const auto& dp : points) {
    const auto b = prompting::render(dp, index, cfg);
    out += json{{"dp_id", dp.dp_id()},
                {"system", b.system_message()},
                {"user", b.user_message()},
                {"prompt_hash", b.prompt_hash()},
                {"token_count", b.token_count},
                {"first_context_index", b.first_context_index}}
               .dump();
    out += '\n';
  }
  emit(o, out);
  return 0;
}

int cmd_eval(const Options& o, const Config& c) {
  const auto& input = single_input(o);
  const auto& conv_path = required(o.conversations, "conversations");
  const auto convs = io::read_conversations(conv_path);
  const ConversationIndex index(convs);
  const auto points = filter_split(io::read_decision_points(input), o.split);
  auto backend = make_backend(c);
  backends::EvalOptions opts;
  opts.prompt = prompt_config(c);
  opts.concurrency = static_cast<int>(c.get_int("concurrency", 4));
  if (opts.concurrency < 1) throw Error("SchemaViolation", "concurrency must be >= 1", {{"field", "concurrency"}});

  const auto records = backends::evaluate(points, index, *backend, opts);
  std::string out;
  for (const auto& r : records) {
    out += backends::to_json(r).dump();
    out += '\n';
  }
  const json manifest{
      {"config", c.to_json()},
      {"config_hash", c.hash()},
      {"backend", backend_config(c).to_json()},
      {"prompt_assets",
       {{"version", std::string(prompting::assets::kVersion)},
        {"system_hash", prompting::asset_hash(prompting::assets::kSystemPrompt)},
        {"instruction_hash", prompting::asset_hash(prompting::assets::kInstructionTemplate)}}},
      {"dataset_hash", content_hash({io::read_file(input), io::read_file(conv_path)})},
      {"split", o.split.value_or("all")},
      {"n", records.size()},
  };
  if (o.output) {
    io::write_file_atomic(*o.output + ".manifest.json", manifest.dump(2) + "\n");
    io::write_file_atomic(*o.output, out);
  } else {
    std::cout << out;
    std::cerr << manifest.dump() << "\n";
  }
  return 0;
}

int cmd_score(const Options& o) {
  const auto points = io::read_decision_points(required(o.points, "points"));
  std::map<std::string, const DecisionPoint*> by_id;
  for (const auto& p : points) by_id[p.dp_id()] = &p;

  std::vector<std::pair<Decision, prompting::ModelOutput>> pairs;
  std::vector<Category> cats;
  std::set<std::string> seen;
  auto in = io::open_input(single_input(o));
  io::for_each_jsonl(in, [&](const json& j, std::size_t) {
    auto rec = backends::prediction_from_json(j);
    auto it = by_id.find(rec.dp_id);
    if (it == by_id.end())
      throw Error("DanglingPrediction", "prediction for unknown dp_id " + rec.dp_id, {{"dp_id", rec.dp_id}});
    if (!seen.insert(rec.dp_id).second)
      throw Error("SchemaViolation", "duplicate prediction for " + rec.dp_id, {{"dp_id", rec.dp_id}});
    pairs.emplace_back(it->second->label(), std::move(rec.output));
    cats.push_back(it->second->category());
  });
  const auto report = metrics::score(pairs, cats);
  const std::string report_json = metrics::to_json(report).dump(2) + "\n";
  if (o.csv) io::write_file_atomic(*o.csv, metrics::csv_header() + metrics::csv_row(o.name, report));
  emit(o, report_json);
  return 0;
}

std::map<std::string, Decision> read_annotations(const std::string& path) {
  std::map<std::string, Decision> out;
  auto in = io::open_input(path);
  io::for_each_jsonl(in, [&](const json& j, std::size_t) {
    if (!j.is_object() || !j.contains("dp_id") || !j["dp_id"].is_string())
      throw Error("SchemaViolation", "annotation needs a string dp_id", {{"field", "dp_id"}});
    const auto& v = j.contains("label") ? j["label"] : j.value("decision", json());
    const auto d = v.is_string() ? parse_decision(v.get<std::string>()) : std::nullopt;
    if (!d) throw Error("SchemaViolation", "annotation label must be SPEAK or SILENT", {{"field", "label"}});
    if (!out.emplace(j["dp_id"].get<std::string>(), *d).second)
      throw Error("SchemaViolation", "duplicate annotation for " + j["dp_id"].get<std::string>(), {{"field", "dp_id"}});
  });
  return out;
}

int cmd_agree(const Options& o) {
  if (o.inputs.size() < 2) throw Error("UsageError", "agree needs at least two --input files", {{"field", "input"}});
  std::vector<std::map<std::string, Decision>> files;
  for (const auto& p : o.inputs) files.push_back(read_annotations(p));
  for (std::size_t i = 1; i < files.size(); ++i) {
    bool same = files[i].size() == files[0].size();
    for (auto it = files[0].begin(); same && it != files[0].end(); ++it) same = files[i].contains(it->first);
    if (!same)
      throw Error("LengthMismatch", "annotation files cover different dp_id sets",
                  {{"a", o.inputs[0]}, {"b", o.inputs[i]}});
  }
  auto as_vector = [&](const std::map<std::string, Decision>& m) {
    std::vector<Decision> v;
    for (const auto& [id, d] : files[0]) v.push_back(m.at(id));
    return v;
  };
  json pairs = json::array();
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < files.size(); ++i)
    for (std::size_t j = i + 1; j < files.size(); ++j) {
      const double k = metrics::cohen_kappa(as_vector(files[i]), as_vector(files[j]));
      pairs.push_back({{"a", o.inputs[i]}, {"b", o.inputs[j]}, {"kappa", k}});
      sum += k;
      ++count;
    }
  emit(o, json{{"n", files[0].size()}, {"pairs", pairs}, {"mean_kappa", sum / static_cast<double>(count)}}.dump(2) + "\n");
  return 0;
}

int cmd_export_sft(const Options& o, const Config& c) {
  const auto convs = io::read_conversations(required(o.conversations, "conversations"));
  const auto points = filter_split(io::read_decision_points(single_input(o)), o.split);
  const auto cfg = prompt_config(c);
  std::optional<dataset::ReasoningLookup> lookup;
  if (o.reasoning) {
    auto in = io::open_input(*o.reasoning);
    lookup = io::read_reasoning(in);
  }
  const auto examples = dataset::export_sft(points, ConversationIndex(convs), cfg, lookup ? &*lookup : nullptr);
  emit(o, io::to_jsonl(examples));
  return 0;
}

int cmd_distill(const Options& o, const Config& c) {
  const auto convs = io::read_conversations(required(o.conversations, "conversations"));
  const ConversationIndex index(convs);
  const auto points = filter_split(io::read_decision_points(single_input(o)), o.split);
  const auto cfg = prompt_config(c);
  std::vector<backends::DistillationRequest> requests;
  std::string req_out;
  for (const auto& dp : points) {
    requests.push_back(backends::build_distillation_request(dp, index.resolve(dp), cfg));
    req_out += json{{"dp_id", dp.dp_id()},
                    {"label", std::string(to_string(dp.label()))},
                    {"system", requests.back().system},
                    {"user", requests.back().user}}
                   .dump();
    req_out += '\n';
  }
  if (!o.send) {
    emit(o, req_out);
    return 0;
  }

  const auto& traces_path = required(o.traces_output, "traces-output");
  auto bcfg = backend_config(c);
  if (bcfg.kind != backends::BackendKind::RemoteChat)
    throw Error("UsageError", "distill --send needs --backend remote_chat", {{"field", "backend"}});
  backends::ChatClient client(bcfg);
  const int concurrency = std::max<int>(1, static_cast<int>(c.get_int("concurrency", 4)));
  std::vector<std::string> raw(requests.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < requests.size() && !error; i = next++) {
      try {
        const auto& r = requests[i];
        raw[i] = client.complete({{"system", r.system}, {"user", r.user}}, content_hash({r.system, r.user})).raw;
      } catch (...) {
        std::lock_guard lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < concurrency; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);

  std::string accepted, rejected;
  for (std::size_t i = 0; i < requests.size(); ++i) {
    const auto trace = backends::extract_teacher_trace(raw[i]);
    const auto verdict = backends::validate_trace(trace, points[i].label(), o.max_sentences);
    if (verdict.accepted)
      accepted += json{{"dp_id", points[i].dp_id()}, {"reasoning", trace}}.dump() + "\n";
    else
      rejected += json{{"dp_id", points[i].dp_id()}, {"reason", verdict.reason}, {"raw", raw[i]}}.dump() + "\n";
  }
  if (o.output) io::write_file_atomic(*o.output, req_out);
  io::write_file_atomic(traces_path, accepted);
  io::write_file_atomic(traces_path + ".rejected.jsonl", rejected);
  return 0;
}

int cmd_batches(const Options& o, const Config& c) {
  const auto points = filter_split(io::read_decision_points(single_input(o)), o.split);
  const auto batch_size = static_cast<std::size_t>(c.get_int("batch_size", 32));
  const auto plan = o.num_batches ? dataset::balanced_batches_n(points, batch_size, seed_of(c), *o.num_batches)
                                  : dataset::balanced_batches(points, batch_size, seed_of(c), o.epochs);
  emit(o, io::to_json(plan).dump() + "\n");
  return 0;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const Options& o, const Config& c) {
  auto backend = make_backend(c);
  const auto cfg = prompt_config(c);
  httplib::Server server;
  std::mutex backend_mu;
  const bool serialize = backend_config(c).kind == backends::BackendKind::Replay;
  service::install_routes(server, *backend, cfg, serialize ? &backend_mu : nullptr);
  g_server = &server;
  std::signal(SIGINT, [](int) { if (g_server) g_server->stop(); });
  std::signal(SIGTERM, [](int) { if (g_server) g_server->stop(); });
  std::cerr << json{{"listening", o.host + ":" + std::to_string(o.port)}, {"backend", backend->id()}}.dump() << "\n";
  if (!server.listen(o.host, o.port))
    throw Error("IoError", "cannot listen on " + o.host + ":" + std::to_string(o.port), {{"port", o.port}});
  return 0;
}

void print_error(const Error& e) { std::cerr << e.to_json().dump() << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"turntake: multi-party turn-taking benchmark toolkit"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--input", o.inputs, "Input file (repeatable where noted)");
    sub->add_option("--output", o.output, "Output file (stdout when omitted)");
    sub->add_option("--config", o.config_path, "key = value config file; flags override it");
    sub->add_option("--seed", o.seed, "RNG seed");
  };
  auto prompt_flags = [&](CLI::App* sub) {
    sub->add_option("--conversations", o.conversations, "conversations.jsonl");
    sub->add_option("--mode", o.mode, "decision_only | reasoning_with_decision");
    sub->add_option("--budget", o.budget, "Token budget (default 2048)");
    sub->add_option("--budget-scope", o.budget_scope, "full | context");
    sub->add_option("--system-repeats", o.system_repeats, "1 or 2");
    sub->add_option("--split", o.split, "Only points of this split (train|val|test|all)");
  };
  auto backend_flags = [&](CLI::App* sub) {
    sub->add_option("--backend", o.backend, "rule_based | replay | remote_chat");
    sub->add_option("--backend-id", o.backend_id, "Identifier recorded with predictions");
    sub->add_option("--replay-file", o.replay_file, "JSONL {dp_id, raw} for the replay backend");
    sub->add_option("--endpoint", o.endpoint, "Chat-completion URL for remote_chat");
    sub->add_option("--model", o.model, "Model name for remote_chat");
    sub->add_option("--cache-dir", o.cache_dir, "Response cache directory");
    sub->add_option("--max-retries", o.max_retries, "Retries on transient failures");
    sub->add_option("--max-tokens", o.max_tokens, "Max output tokens requested");
    sub->add_option("--concurrency", o.concurrency, "Max in-flight requests");
  };

  auto* ingest = app.add_subcommand("ingest", "Plaintext/JSONL transcripts -> filtered conversations.jsonl");
  common(ingest);
  ingest->add_option("--format", o.format, "auto | jsonl | plaintext");
  ingest->add_option("--conv-id", o.conv_id, "conv_id for plaintext input (default: file stem)");
  ingest->add_option("--source", o.source, "source tag for plaintext input");
  ingest->add_option("--aliases", o.aliases, "JSON {speaker: [alias, ...]}");
  ingest->add_option("--filler-lexicon", o.filler_lexicon, "One filler word per line");

  auto* extract = app.add_subcommand("extract", "conversations.jsonl -> decision points");
  common(extract);

  auto* dedup = app.add_subcommand("dedup", "Drop exact-duplicate decision points");
  common(dedup);
  dedup->add_option("--conversations", o.conversations, "conversations.jsonl")->required();

  auto* split = app.add_subcommand("split", "Assign train/val/test per category");
  common(split);
  split->add_option("--ratios", o.ratios, "train,val,test (default 0.8,0.1,0.1)");

  auto* subsample = app.add_subcommand("subsample", "Stratified subsample by category");
  common(subsample);
  subsample->add_option("--target-n", o.target_n, "Number of points to keep");
  subsample->add_option("--only-split", o.only_split, "Split to subsample (default train; 'all' for every point)");

  auto* render = app.add_subcommand("render", "Dump rendered prompts");
  common(render);
  prompt_flags(render);

  auto* eval = app.add_subcommand("eval", "Run a backend over decision points -> predictions.jsonl");
  common(eval);
  prompt_flags(eval);
  backend_flags(eval);

  auto* score = app.add_subcommand("score", "predictions.jsonl -> report.json / csv");
  common(score);
  score->add_option("--points", o.points, "Decision points with labels")->required();
  score->add_option("--csv", o.csv, "Also write a CSV row (I1,I2,S1,S2,Acc,F1_avg,Bal Acc)");
  score->add_option("--name", o.name, "Row name for the CSV");

  auto* agree = app.add_subcommand("agree", "Pairwise Cohen's kappa between annotation files");
  common(agree);

  auto* export_sft = app.add_subcommand("export-sft", "Decision points -> SFT JSONL");
  common(export_sft);
  prompt_flags(export_sft);
  export_sft->add_option("--reasoning", o.reasoning, "JSONL {dp_id, reasoning} for reasoning mode");

  auto* distill = app.add_subcommand("distill", "Build (and optionally send) label-conditioned teacher requests");
  common(distill);
  prompt_flags(distill);
  backend_flags(distill);
  distill->add_flag("--send", o.send, "Send requests to the remote teacher");
  distill->add_option("--traces-output", o.traces_output, "Accepted traces JSONL (with --send)");
  distill->add_option("--max-sentences", o.max_sentences, "Sentence limit for accepted traces");

  auto* batches = app.add_subcommand("batches", "Four-way balanced batch plan");
  common(batches);
  batches->add_option("--batch-size", o.batch_size, "Multiple of 4 (default 32)");
  batches->add_option("--epochs", o.epochs, "Epochs of ceil(n / batch_size) batches");
  batches->add_option("--num-batches", o.num_batches, "Exact number of batches (overrides --epochs)");
  batches->add_option("--split", o.split, "Only points of this split");

  auto* serve = app.add_subcommand("serve", "HTTP service: POST /decide, GET /healthz");
  serve->add_option("--config", o.config_path, "key = value config file");
  serve->add_option("--host", o.host, "Bind address");
  serve->add_option("--port", o.port, "Port");
  serve->add_option("--mode", o.mode, "Default mode");
  serve->add_option("--budget", o.budget, "Token budget");
  serve->add_option("--system-repeats", o.system_repeats, "1 or 2");
  backend_flags(serve);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << json{{"error", "UsageError"}, {"message", e.what()}, {"details", json::object()}}.dump() << "\n";
    return 2;
  }

  try {
    const Config cfg = load_config(o);
    if (*ingest) return cmd_ingest(o);
    if (*extract) return cmd_extract(o);
    if (*dedup) return cmd_dedup(o);
    if (*split) return cmd_split(o, cfg);
    if (*subsample) return cmd_subsample(o, cfg);
    if (*render) return cmd_render(o, cfg);
    if (*eval) return cmd_eval(o, cfg);
    if (*score) return cmd_score(o);
    if (*agree) return cmd_agree(o);
    if (*export_sft) return cmd_export_sft(o, cfg);
    if (*distill) return cmd_distill(o, cfg);
    if (*batches) return cmd_batches(o, cfg);
    if (*serve) return cmd_serve(o, cfg);
  } catch (const Error& e) {
    print_error(e);
    return e.code() == "UsageError" ? 2 : 1;
  } catch (const json::exception& e) {
    print_error(Error("SchemaViolation", e.what()));
    return 1;
  } catch (const std::exception& e) {
    print_error(Error("InternalError", e.what()));
    return 1;
  }
  return 0;
}
