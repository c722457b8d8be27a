#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "pcev/embedding.hpp"
#include "pcev/text.hpp"

namespace pcev {

struct EndpointRef {
  std::string base_url;  // e.g. http://127.0.0.1:8080/v1
  std::string model_name;
  // Name of the environment variable holding the API key; empty for none.
  std::string auth_env_var;
  std::chrono::milliseconds timeout{60'000};
  int max_retries = 3;
  // Prompt cap in tokens applied before dispatch; unset means no cap.
  std::optional<std::size_t> input_truncation;
  std::size_t max_in_flight = 8;

  void validate() const;
};

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  std::size_t max_new_tokens = 500;
  // Overrides EndpointRef::input_truncation when set.
  std::optional<std::size_t> input_truncation;

  static ChatRequest user(std::string content);
};

struct ChatResult {
  std::string text;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

struct LogprobResult {
  std::vector<std::string> tokens;
  // NaN where the service reported null (e.g. the very first prompt token).
  std::vector<double> logprobs;
  // Byte offset of each token inside the continuation.
  std::vector<std::size_t> offsets;
  std::string condition_hash;
};

struct TemplateLiteral {
  std::string text;
};
struct SlotRef {
  std::string slot_id;
};
using TemplateSegment = std::variant<TemplateLiteral, SlotRef>;

struct SoftUnit {
  std::string unit_id;
  std::string text;
};

struct SlotHandle {
  std::string slot_id;
  std::string unit_id;
  std::size_t position = 0;
};

// Soft-compression wire protocol version sent with every encode request.
inline constexpr std::string_view kSoftProtocolVersion = "1";

// Checks a soft-service response against the request: slots_per_unit
// handles per unit, ordered by (unit, slot index), unique ids. Throws
// ProtocolError on any violation.
std::vector<SlotHandle> validate_slot_response(const nlohmann::json& response,
                                               std::span<const SoftUnit> units,
                                               std::size_t slots_per_unit);

struct HttpResponse {
  int status = 0;
  std::string body;
};

class Transport {
 public:
  virtual ~Transport() = default;
  // POSTs a JSON body to base_url + path. Connection failures and timeouts
  // throw a retryable ServiceError.
  virtual HttpResponse post(const EndpointRef& endpoint, const std::string& path,
                            const std::string& body) = 0;
};

class HttpTransport final : public Transport {
 public:
  HttpResponse post(const EndpointRef& endpoint, const std::string& path,
                    const std::string& body) override;
};

// Content-addressed response store: one JSON file per entry, named by the
// hex digest of (endpoint model, capability, canonical payload). Entries
// never expire.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, std::string_view capability, const std::string& value);
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path entry_path(const std::string& key) const;
  std::filesystem::path dir_;
};

std::string cache_key(const EndpointRef& endpoint, std::string_view capability,
                      const nlohmann::json& payload);

struct RetryPolicy {
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{30'000};
};

struct GatewayOptions {
  std::optional<std::filesystem::path> cache_dir;
  // Cache misses become errors instead of network calls.
  bool offline = false;
  RetryPolicy retry;
};

class Gateway {
 public:
  Gateway(std::shared_ptr<Transport> transport, std::shared_ptr<const Tokenizer> tokenizer,
          GatewayOptions options = {});
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  ChatResult chat(const EndpointRef& endpoint, const ChatRequest& req);

  // Per-token logprobs of `continuation` given `condition`, via the
  // completions API (echo + logprobs). Throws CapabilityError when the
  // endpoint returns no logprobs.
  LogprobResult token_logprobs(const EndpointRef& endpoint, std::string_view condition,
                               std::string_view continuation);

  // Unit-normalized token vectors; the dimension must stay constant per
  // endpoint across calls.
  TokenVectors token_embeddings(const EndpointRef& endpoint, std::string_view text);

  // Slot-conditioned generation. Every slot id must have been issued by
  // encode_soft for a service at the same base_url. Without slots this is plain chat.
  ChatResult generate_with_slots(const EndpointRef& endpoint,
                                 std::span<const TemplateSegment> segments,
                                 const ChatRequest& req);

  std::vector<SlotHandle> encode_soft(const EndpointRef& endpoint,
                                      std::span<const SoftUnit> units,
                                      std::size_t slots_per_unit);

  std::vector<Token> tokenize(const EndpointRef& endpoint, std::string_view text);

  struct Stats {
    std::uint64_t network_calls = 0;
    std::uint64_t cache_hits = 0;
  };
  Stats stats() const;

  const Tokenizer& tokenizer() const { return *tokenizer_; }
  std::shared_ptr<const Tokenizer> tokenizer_ptr() const { return tokenizer_; }
  // Not thread-safe; call before the first request.
  void set_tokenizer(std::shared_ptr<const Tokenizer> tokenizer) { tokenizer_ = std::move(tokenizer); }

 private:
  class Limiter;

  std::string request(const EndpointRef& endpoint, std::string_view capability,
                      const std::string& path, const nlohmann::json& payload);
  Limiter& limiter_for(const EndpointRef& endpoint);
  std::string slot_scope(const EndpointRef& endpoint) const;

  std::shared_ptr<Transport> transport_;
  std::shared_ptr<const Tokenizer> tokenizer_;
  GatewayOptions options_;
  std::unique_ptr<ResponseCache> cache_;

  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Limiter>> limiters_;
  std::map<std::string, std::size_t> embedding_dims_;
  std::set<std::string> issued_slots_;

  std::atomic<std::uint64_t> network_calls_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
};

// Exact tokenizer served by the endpoint's /tokenize extension.
class ServiceTokenizer final : public Tokenizer {
 public:
  ServiceTokenizer(Gateway& gateway, EndpointRef endpoint)
      : gateway_(gateway), endpoint_(std::move(endpoint)) {}

  std::vector<Token> tokenize(std::string_view text) const override {
    return gateway_.tokenize(endpoint_, text);
  }
  std::string name() const override { return "service:" + endpoint_.model_name; }

 private:
  Gateway& gateway_;
  EndpointRef endpoint_;
};

class GatewayEmbedder final : public TokenEmbedder {
 public:
  GatewayEmbedder(Gateway& gateway, EndpointRef endpoint)
      : gateway_(gateway), endpoint_(std::move(endpoint)) {}
  TokenVectors embed(std::string_view text) override {
    return gateway_.token_embeddings(endpoint_, text);
  }

 private:
  Gateway& gateway_;
  EndpointRef endpoint_;
};

}  // namespace pcev
