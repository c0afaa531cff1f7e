#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

namespace turntake {

// Every failure surfaced by the library carries a stable machine-readable
// code (e.g. "UnknownSpeaker", "MissingReasoning") plus structured details.
// The CLI prints {"error": code, "message": what(), "details": ...} on stderr.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& message, nlohmann::json details = nlohmann::json::object())
      : std::runtime_error(message), code_(std::move(code)), details_(std::move(details)) {}

  const std::string& code() const noexcept { return code_; }
  const nlohmann::json& details() const noexcept { return details_; }

  nlohmann::json to_json() const {
    return {{"error", code_}, {"message", what()}, {"details", details_}};
  }

 private:
  std::string code_;
  nlohmann::json details_;
};

}  // namespace turntake
