#pragma once

#include <chrono>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace acof::llm {

enum class Role { system, user, assistant };

std::string_view to_string(Role role);

struct Message {
  Role role = Role::user;
  std::string content;
};

struct ChatRequest {
  std::string model;
  std::vector<Message> messages;
  double temperature = 0.2;
  int max_tokens = 2048;

  /// Throws ValidationError: empty messages, first role not system,
  /// temperature outside [0, 2], max_tokens <= 0.
  void validate() const;
};

/// JSON body for POST {base_url}/chat/completions.
std::string request_body(const ChatRequest& request);
/// Hex SHA-256 of request_body.
std::string request_digest(const ChatRequest& request);
/// choices[0].message.content of a chat-completions response. Throws
/// TransportError when the body does not have that shape.
std::string extract_content(std::string_view response_body);

enum class Outcome { ok, http_error, timeout, parse_retry };

std::string_view to_string(Outcome outcome);

struct TranscriptEntry {
  std::string request_digest;
  std::string response;
  double latency_ms = 0.0;
  Outcome outcome = Outcome::ok;
};

/// Append-only record of every request attempt.
class Transcript {
 public:
  void append(TranscriptEntry entry) { entries_.push_back(std::move(entry)); }
  const std::vector<TranscriptEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<TranscriptEntry> entries_;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

/// Raised by transports when the request does not complete in time.
class TimeoutError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Transport {
 public:
  virtual ~Transport() = default;
  /// Throws TimeoutError on timeout, acof::TransportError on other
  /// network failures. HTTP error statuses are returned, not thrown.
  virtual HttpResponse post(const std::string& url, const std::string& body,
                            const Headers& headers, std::chrono::milliseconds timeout) = 0;
};

/// cpp-httplib backed transport (http and https).
class HttpTransport final : public Transport {
 public:
  HttpResponse post(const std::string& url, const std::string& body, const Headers& headers,
                    std::chrono::milliseconds timeout) override;
};

/// Replays a fixed script of responses; records every request it sees.
class ScriptedTransport final : public Transport {
 public:
  struct Step {
    int status = 200;
    std::string body;
    bool timeout = false;
  };

  /// 200 with a chat-completions body whose content is `content`.
  ScriptedTransport& reply(std::string content);
  ScriptedTransport& status(int code, std::string body = {});
  ScriptedTransport& timeout();
  ScriptedTransport& raw(Step step);

  HttpResponse post(const std::string& url, const std::string& body, const Headers& headers,
                    std::chrono::milliseconds timeout) override;

  struct SeenRequest {
    std::string url;
    std::string body;
    Headers headers;
  };
  const std::vector<SeenRequest>& seen() const { return seen_; }
  std::size_t remaining() const { return script_.size(); }

 private:
  std::deque<Step> script_;
  std::vector<SeenRequest> seen_;
};

struct EndpointConfig {
  std::string base_url;
  std::string model;
  std::string api_key;
  std::chrono::milliseconds timeout{std::chrono::seconds(120)};
  int max_attempts = 3;
  std::chrono::milliseconds backoff_base{1000};
  double backoff_factor = 2.0;
};

inline constexpr const char* kApiKeyEnv = "ACOF_API_KEY";

/// Reads the key from ACOF_API_KEY. Throws ConfigError when unset or empty.
std::string api_key_from_env();

using Sleeper = std::function<void(std::chrono::milliseconds)>;

/// Blocking chat-completion client with retry on 429/5xx/timeouts.
class ChatClient {
 public:
  ChatClient(EndpointConfig config, std::shared_ptr<Transport> transport, Sleeper sleeper = {});

  /// Returns the first choice's content. The API key is scrubbed from the
  /// request body before sending. Throws acof::TransportError after
  /// exhausting attempts or on a non-retryable HTTP status.
  std::string complete(const ChatRequest& request);

  /// Agents call this when a reply failed to parse and will be retried.
  void record_parse_retry(const ChatRequest& request, std::string_view raw, std::string_view reason);

  const Transcript& transcript() const { return transcript_; }
  const EndpointConfig& config() const { return config_; }

  /// Replaces every occurrence of the API key with "***".
  std::string redact(std::string_view text) const;

 private:
  EndpointConfig config_;
  std::shared_ptr<Transport> transport_;
  Sleeper sleeper_;
  Transcript transcript_;
};

}  // namespace acof::llm
