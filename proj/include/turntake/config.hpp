#pragma once

#include <istream>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "turntake/error.hpp"
#include "turntake/hash.hpp"
#include "turntake/text.hpp"

namespace turntake {

// `key = value` lines; '#' starts a comment, blank lines are ignored.
// Recognised keys: token_budget, system_repeats, mode, budget_scope, seed,
// backend, backend_id, endpoint_url, model_name, temperature, max_retries,
// timeout_s, max_tokens, cache_dir, concurrency, batch_size, target_n,
// replay_file, backoff_base_ms.
class Config {
 public:
  static Config parse(std::istream& in) {
    Config c;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      const auto t = text::trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string_view::npos)
        throw Error("MalformedRecord", "config line " + std::to_string(line_no) + ": expected key = value",
                    {{"line_no", line_no}});
      const std::string key(text::trim(t.substr(0, eq)));
      if (key.empty())
        throw Error("MalformedRecord", "config line " + std::to_string(line_no) + ": empty key", {{"line_no", line_no}});
      if (looks_like_credential(key))
        throw Error("CredentialInConfig",
                    "config line " + std::to_string(line_no) + ": credentials are read from TURNTAKE_API_KEY only",
                    {{"line_no", line_no}, {"field", key}});
      c.values_[key] = std::string(text::trim(t.substr(eq + 1)));
    }
    return c;
  }

  static bool looks_like_credential(std::string_view key) {
    const std::string k = text::to_lower_ascii(key);
    for (const char* bad : {"api_key", "apikey", "secret", "password", "authorization", "bearer"})
      if (k.find(bad) != std::string::npos) return true;
    return k == "key" || k == "token" || k == "access_token";
  }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    return it == values_.end() ? std::nullopt : std::optional<std::string>(it->second);
  }

  std::string get_or(const std::string& key, std::string fallback) const { return get(key).value_or(std::move(fallback)); }

  long long get_int(const std::string& key, long long fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
      std::size_t pos = 0;
      const long long r = std::stoll(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument(*v);
      return r;
    } catch (const std::exception&) {
      throw Error("SchemaViolation", "config key '" + key + "' must be an integer", {{"field", key}});
    }
  }

  double get_double(const std::string& key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    try {
      std::size_t pos = 0;
      const double r = std::stod(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument(*v);
      return r;
    } catch (const std::exception&) {
      throw Error("SchemaViolation", "config key '" + key + "' must be a number", {{"field", key}});
    }
  }

  const std::map<std::string, std::string>& values() const { return values_; }

  nlohmann::json to_json() const { return nlohmann::json(values_); }

  // Hash of the sorted key/value snapshot.
  std::string hash() const { return content_hash(to_json().dump()); }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace turntake
