#pragma once

// Language-model designer: one chat-completion round trip per attempt,
// extraction of the architecture document from the reply, and the
// regenerate-until-valid loop with violation feedback.

#include <cstdlib>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "flnas/arch_ir.hpp"
#include "flnas/errors.hpp"
#include "flnas/json_util.hpp"
#include "flnas/prompting.hpp"
#include "httplib.h"

namespace flnas {

struct LlmConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model_name = "gpt-4";
  double temperature = 0.7;
  int max_retries = 5;
  double timeout_s = 120.0;
  std::string api_key_env = "OPENAI_API_KEY";
};

class TransportError : public Error {
 public:
  using Error::Error;
};

class ApiError : public Error {
 public:
  ApiError(int status, std::string body)
      : Error("backend returned HTTP " + std::to_string(status)), status_(status), body_(std::move(body)) {}
  int status() const noexcept { return status_; }
  const std::string& body() const noexcept { return body_; }

 private:
  int status_;
  std::string body_;
};

class MalformedResponse : public Error {
 public:
  using Error::Error;
};

class ExtractionError : public Error {
 public:
  using Error::Error;
};

class ExhaustedRetries : public Error {
 public:
  ExhaustedRetries(int attempts, ValidationReport last, std::vector<std::string> raw_replies)
      : Error("no valid architecture after " + std::to_string(attempts) + " attempts"),
        attempts_(attempts), last_(std::move(last)), raw_replies_(std::move(raw_replies)) {}
  int attempts() const noexcept { return attempts_; }
  const ValidationReport& last_report() const noexcept { return last_; }
  const std::vector<Violation>& last_violations() const noexcept { return last_.violations; }
  const std::vector<std::string>& raw_replies() const noexcept { return raw_replies_; }

 private:
  int attempts_;
  ValidationReport last_;
  std::vector<std::string> raw_replies_;
};

struct DesignOutcome {
  Architecture architecture;
  int attempts = 0;
  std::vector<std::string> raw_replies;
};

inline LlmConfig llm_config_from_json(const Json& j) {
  detail::require_object(j, "llm");
  detail::reject_unknown_keys(j, {"base_url", "model_name", "temperature", "max_retries", "timeout_s", "api_key_env"},
                              "llm");
  LlmConfig c;
  if (j.contains("base_url")) c.base_url = detail::get_string(j, "base_url", "llm");
  if (j.contains("model_name")) c.model_name = detail::get_string(j, "model_name", "llm");
  if (j.contains("temperature")) c.temperature = detail::get_number(j, "temperature", "llm");
  if (j.contains("max_retries")) c.max_retries = static_cast<int>(detail::get_int_min(j, "max_retries", "llm", 1));
  if (j.contains("timeout_s")) c.timeout_s = detail::get_number(j, "timeout_s", "llm");
  if (j.contains("api_key_env")) c.api_key_env = detail::get_string(j, "api_key_env", "llm");
  if (c.temperature < 0) throw SchemaError("llm.temperature must be >= 0");
  if (!(c.timeout_s > 0)) throw SchemaError("llm.timeout_s must be > 0");
  return c;
}

// ---------------------------------------------------------------------------
// Backends

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  // Assistant message content for one round trip.
  virtual std::string complete(const PromptBundle& bundle) = 0;
};

// Request body for POST {base_url}/chat/completions.
inline std::string build_chat_request(const PromptBundle& bundle, const LlmConfig& cfg) {
  OrderedJson j;
  j["model"] = cfg.model_name;
  j["temperature"] = cfg.temperature;
  j["messages"] = OrderedJson::array();
  j["messages"].push_back({{"role", "system"}, {"content", bundle.system_text}});
  j["messages"].push_back({{"role", "user"}, {"content", bundle.user_text}});
  return j.dump();
}

inline std::string parse_chat_response(std::string_view body) {
  Json j;
  try {
    j = Json::parse(body.begin(), body.end());
  } catch (const Json::parse_error& e) {
    throw MalformedResponse(std::string("response is not JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("choices")) throw MalformedResponse("response lacks 'choices'");
  const Json& choices = j["choices"];
  if (!choices.is_array() || choices.empty()) throw MalformedResponse("response 'choices' is empty");
  const Json& first = choices[0];
  if (!first.is_object() || !first.contains("message") || !first["message"].is_object())
    throw MalformedResponse("response lacks choices[0].message");
  const Json& msg = first["message"];
  if (!msg.contains("content") || !msg["content"].is_string())
    throw MalformedResponse("response lacks choices[0].message.content");
  return msg["content"].get<std::string>();
}

class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(LlmConfig cfg) : cfg_(std::move(cfg)) {
    const auto scheme_end = cfg_.base_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("llm.base_url must include a scheme: " + cfg_.base_url);
    const auto path_start = cfg_.base_url.find('/', scheme_end + 3);
    origin_ = cfg_.base_url.substr(0, path_start);
    path_ = path_start == std::string::npos ? "" : cfg_.base_url.substr(path_start);
    while (!path_.empty() && path_.back() == '/') path_.pop_back();
    path_ += "/chat/completions";
  }

  std::string complete(const PromptBundle& bundle) override {
    httplib::Client client(origin_);
    if (!client.is_valid()) throw TransportError("cannot create client for " + origin_);
    const auto secs = static_cast<time_t>(cfg_.timeout_s);
    const auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);

    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

    auto res = client.Post(path_, headers, build_chat_request(bundle, cfg_), "application/json");
    if (!res) throw TransportError("request to " + origin_ + path_ + " failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300) throw ApiError(res->status, res->body);
    return parse_chat_response(res->body);
  }

 private:
  LlmConfig cfg_;
  std::string origin_;
  std::string path_;
};

// Replays replies from a file, one JSON string per line, in order.
class ScriptedBackend final : public ChatBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> replies) : replies_(std::move(replies)) {}

  static ScriptedBackend from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read mock replies file '" + path + "'");
    std::vector<std::string> replies;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      Json j;
      try {
        j = Json::parse(line);
      } catch (const Json::parse_error& e) {
        throw ParseError(line_no, std::string("mock reply is not JSON: ") + e.what());
      }
      if (!j.is_string()) throw ParseError(line_no, "mock reply must be a JSON string");
      replies.push_back(j.get<std::string>());
    }
    return ScriptedBackend(std::move(replies));
  }

  std::string complete(const PromptBundle& bundle) override {
    requests_.push_back(bundle);
    if (next_ >= replies_.size()) throw TransportError("scripted replies exhausted");
    return replies_[next_++];
  }

  // Drop the first `n` replies (replies consumed by an earlier run).
  void skip(std::size_t n) { next_ = std::min(replies_.size(), next_ + n); }
  std::size_t consumed() const noexcept { return next_; }
  const std::vector<PromptBundle>& requests() const noexcept { return requests_; }

 private:
  std::vector<std::string> replies_;
  std::size_t next_ = 0;
  std::vector<PromptBundle> requests_;
};

// One round trip over HTTP.
inline std::string complete(const PromptBundle& bundle, const LlmConfig& cfg) {
  return HttpChatBackend(cfg).complete(bundle);
}

// ---------------------------------------------------------------------------
// Extraction

namespace detail {

struct FencedBlock {
  std::size_t begin;
  std::string body;
};

inline std::vector<FencedBlock> fenced_blocks(std::string_view reply) {
  std::vector<FencedBlock> blocks;
  std::size_t pos = 0;
  while (true) {
    const auto open = reply.find("```", pos);
    if (open == std::string_view::npos) break;
    const auto line_end = reply.find('\n', open + 3);
    if (line_end == std::string_view::npos) break;
    const auto close = reply.find("```", line_end + 1);
    if (close == std::string_view::npos) break;
    blocks.push_back({open, std::string(reply.substr(line_end + 1, close - line_end - 1))});
    pos = close + 3;
  }
  return blocks;
}

// Balanced {...} spans, string-literal aware, largest first.
inline std::vector<std::string> brace_objects(std::string_view text) {
  std::vector<std::string> spans;
  for (std::size_t start = 0; start < text.size(); ++start) {
    if (text[start] != '{') continue;
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (c == '\\') ++i;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        spans.emplace_back(text.substr(start, i - start + 1));
        break;
      }
    }
  }
  std::stable_sort(spans.begin(), spans.end(), [](const std::string& a, const std::string& b) { return a.size() > b.size(); });
  return spans;
}

}  // namespace detail

// First fenced block that parses as an architecture, else the largest
// balanced-brace object that does.
inline Architecture extract_architecture(std::string_view reply) {
  std::string last_error = "no JSON object found in reply";
  for (const auto& block : detail::fenced_blocks(reply)) {
    try {
      return parse_architecture(block.body);
    } catch (const Error& e) {
      last_error = std::string("fenced block: ") + e.what();
    }
  }
  for (const auto& span : detail::brace_objects(reply)) {
    try {
      return parse_architecture(span);
    } catch (const Error& e) {
      last_error = e.what();
    }
  }
  throw ExtractionError("no parseable architecture in reply (" + last_error + ")");
}

// ---------------------------------------------------------------------------
// Regenerate-until-valid loop

inline std::string correction_paragraph(int attempt, int max_attempts, const std::vector<Violation>& violations) {
  std::string out = "\n\nYour previous reply (attempt " + std::to_string(attempt) + " of " +
                    std::to_string(max_attempts) + ") was rejected:\n";
  out += render_violations(violations);
  out += "Reply again with one corrected architecture document that follows the format and stays within the "
         "available range.";
  return out;
}

// `is_duplicate` flags structures already in the archive; such replies
// count as failed attempts with code DUPLICATE.
inline DesignOutcome design_candidate(const PromptBundle& bundle, ChatBackend& backend, const LlmConfig& cfg,
                                      const Choices& choices,
                                      const std::function<bool(const Architecture&)>& is_duplicate = {}) {
  DesignOutcome outcome;
  PromptBundle current = bundle;
  ValidationReport last;
  for (int attempt = 1; attempt <= cfg.max_retries; ++attempt) {
    outcome.raw_replies.push_back(backend.complete(current));
    outcome.attempts = attempt;

    last = ValidationReport{};
    try {
      auto arch = extract_architecture(outcome.raw_replies.back());
      last = validate(arch, choices);
      if (last.valid && is_duplicate && is_duplicate(arch)) {
        last.valid = false;
        last.per_layer_shapes.clear();
        last.violations.push_back({std::nullopt, "DUPLICATE", "architecture is identical to one already evaluated"});
      }
      if (last.valid) {
        outcome.architecture = std::move(arch);
        return outcome;
      }
    } catch (const ExtractionError& e) {
      last.violations.push_back({std::nullopt, "EXTRACTION_FAILED", e.what()});
    }
    current.user_text = bundle.user_text + correction_paragraph(attempt, cfg.max_retries, last.violations);
  }
  throw ExhaustedRetries(outcome.attempts, std::move(last), std::move(outcome.raw_replies));
}

}  // namespace flnas
