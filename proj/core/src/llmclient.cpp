#include "acof/llmclient.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdlib>
#include <thread>

#include "acof/digest.hpp"
#include "acof/errors.hpp"

namespace acof::llm {

using nlohmann::json;

std::string_view to_string(Role role) {
  switch (role) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "user";
}

std::string_view to_string(Outcome outcome) {
  switch (outcome) {
    case Outcome::ok: return "ok";
    case Outcome::http_error: return "http_error";
    case Outcome::timeout: return "timeout";
    case Outcome::parse_retry: return "parse_retry";
  }
  return "ok";
}

void ChatRequest::validate() const {
  if (messages.empty()) throw ValidationError("chat request has no messages");
  if (messages.front().role != Role::system) {
    throw ValidationError("first chat message must have role system");
  }
  if (!(temperature >= 0.0 && temperature <= 2.0)) {
    throw ValidationError("temperature must lie in [0, 2]");
  }
  if (max_tokens <= 0) throw ValidationError("max_tokens must be > 0");
}

std::string request_body(const ChatRequest& request) {
  json msgs = json::array();
  for (const auto& m : request.messages) {
    msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  json body = {{"model", request.model},
               {"messages", std::move(msgs)},
               {"temperature", request.temperature},
               {"max_tokens", request.max_tokens}};
  return body.dump();
}

std::string request_digest(const ChatRequest& request) { return sha256_hex(request_body(request)); }

std::string extract_content(std::string_view response_body) {
  const auto doc = json::parse(response_body, nullptr, false);
  if (doc.is_discarded()) throw TransportError("response body is not JSON");
  try {
    return doc.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw TransportError("response has no choices[0].message.content");
  }
}

// ---------------------------------------------------------------------------

ScriptedTransport& ScriptedTransport::reply(std::string content) {
  json body = {{"choices", json::array({{{"index", 0},
                                         {"message", {{"role", "assistant"}, {"content", content}}},
                                         {"finish_reason", "stop"}}})}};
  script_.push_back({200, body.dump(), false});
  return *this;
}

ScriptedTransport& ScriptedTransport::status(int code, std::string body) {
  script_.push_back({code, std::move(body), false});
  return *this;
}

ScriptedTransport& ScriptedTransport::timeout() {
  script_.push_back({0, {}, true});
  return *this;
}

ScriptedTransport& ScriptedTransport::raw(Step step) {
  script_.push_back(std::move(step));
  return *this;
}

HttpResponse ScriptedTransport::post(const std::string& url, const std::string& body,
                                     const Headers& headers, std::chrono::milliseconds) {
  seen_.push_back({url, body, headers});
  if (script_.empty()) throw acof::TransportError("scripted transport exhausted");
  Step step = std::move(script_.front());
  script_.pop_front();
  if (step.timeout) throw TimeoutError("scripted timeout");
  return {step.status, std::move(step.body)};
}

// ---------------------------------------------------------------------------

std::string api_key_from_env() {
  const char* key = std::getenv(kApiKeyEnv);
  if (key == nullptr || *key == '\0') {
    throw ConfigError(std::string(kApiKeyEnv) + " is not set; LLM agents need an API key");
  }
  return key;
}

ChatClient::ChatClient(EndpointConfig config, std::shared_ptr<Transport> transport, Sleeper sleeper)
    : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
  if (config_.api_key.empty()) throw ConfigError("LLM endpoint has no API key");
  if (config_.base_url.empty()) throw ConfigError("LLM endpoint has no base_url");
  if (config_.model.empty()) throw ConfigError("LLM endpoint has no model");
  if (!transport_) throw ConfigError("LLM endpoint has no transport");
  if (config_.max_attempts < 1) config_.max_attempts = 1;
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string ChatClient::redact(std::string_view text) const {
  std::string out(text);
  const std::string& key = config_.api_key;
  if (key.empty()) return out;
  std::size_t pos = 0;
  while ((pos = out.find(key, pos)) != std::string::npos) {
    out.replace(pos, key.size(), "***");
    pos += 3;
  }
  return out;
}

std::string ChatClient::complete(const ChatRequest& request) {
  request.validate();
  // The key belongs in the Authorization header only, even if a model
  // echoed it into text that is now part of the conversation.
  const std::string body = redact(request_body(request));
  const std::string digest = sha256_hex(body);
  std::string url = config_.base_url;
  while (!url.empty() && url.back() == '/') url.pop_back();
  url += "/chat/completions";
  const Headers headers{{"Authorization", "Bearer " + config_.api_key},
                        {"Content-Type", "application/json"}};

  std::string last_problem;
  for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
    if (attempt > 0) {
      const double scale = std::pow(config_.backoff_factor, attempt - 1);
      sleeper_(std::chrono::milliseconds(
          static_cast<long long>(static_cast<double>(config_.backoff_base.count()) * scale)));
    }
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
          .count();
    };
    HttpResponse response;
    try {
      response = transport_->post(url, body, headers, config_.timeout);
    } catch (const TimeoutError& e) {
      transcript_.append({digest, redact(e.what()), elapsed(), Outcome::timeout});
      last_problem = "timeout";
      continue;
    }
    if (response.status == 200) {
      std::string content;
      try {
        content = extract_content(response.body);
      } catch (const acof::TransportError&) {
        transcript_.append({digest, redact(response.body), elapsed(), Outcome::http_error});
        throw;
      }
      transcript_.append({digest, redact(content), elapsed(), Outcome::ok});
      return content;
    }
    transcript_.append({digest, redact(response.body), elapsed(), Outcome::http_error});
    last_problem = "HTTP " + std::to_string(response.status);
    const bool retryable = response.status == 429 || response.status >= 500;
    if (!retryable) throw acof::TransportError("chat completion failed: " + last_problem);
  }
  throw acof::TransportError("chat completion failed after " +
                             std::to_string(config_.max_attempts) + " attempts (last: " +
                             last_problem + ")");
}

void ChatClient::record_parse_retry(const ChatRequest& request, std::string_view raw,
                                    std::string_view reason) {
  std::string text = redact(raw);
  text += "\n[parse error] ";
  text += redact(reason);
  transcript_.append({request_digest(request), std::move(text), 0.0, Outcome::parse_retry});
}

}  // namespace acof::llm
