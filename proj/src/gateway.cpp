#include "pcev/gateway.hpp"

#include <httplib.h>

#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <limits>
#include <regex>
#include <sstream>
#include <thread>

#include "pcev/digest.hpp"
#include "pcev/errors.hpp"

namespace pcev {

using nlohmann::json;

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Maps a 4xx body of the form {"error": {"type": ..., "message": ...}} to
// the matching exception type.
[[noreturn]] void throw_client_error(int status, const std::string& body,
                                     std::string_view capability) {
  std::string type;
  std::string message = body;
  std::optional<std::string> unit_id;
  try {
    const json j = json::parse(body);
    if (j.contains("error") && j["error"].is_object()) {
      const auto& e = j["error"];
      type = e.value("type", std::string{});
      message = e.value("message", body);
      if (e.contains("unit_id") && e["unit_id"].is_string()) unit_id = e["unit_id"].get<std::string>();
    }
  } catch (const json::exception&) {
  }
  const std::string what = std::string(capability) + ": HTTP " + std::to_string(status) + ": " + message;
  if (type == "protocol_error") throw ProtocolError(what);
  if (type == "capability_error") throw CapabilityError(what);
  throw ServiceError(what, false, status, unit_id);
}

json parse_body(const std::string& body, std::string_view capability) {
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string(capability) + ": response is not JSON: " + e.what());
  }
}

std::size_t usage_or(const json& j, const char* field, std::size_t fallback) {
  if (j.contains("usage") && j["usage"].is_object() && j["usage"].contains(field) &&
      j["usage"][field].is_number_unsigned()) {
    return j["usage"][field].get<std::size_t>();
  }
  return fallback;
}

}  // namespace

void EndpointRef::validate() const {
  if (base_url.empty()) throw InvalidArgument("endpoint base_url is empty");
  if (model_name.empty()) throw InvalidArgument("endpoint model_name is empty");
  if (max_retries < 0) throw InvalidArgument("endpoint max_retries must be >= 0");
  if (timeout.count() <= 0) throw InvalidArgument("endpoint timeout must be > 0");
  if (max_in_flight == 0) throw InvalidArgument("endpoint max_in_flight must be >= 1");
}

ChatRequest ChatRequest::user(std::string content) {
  ChatRequest r;
  r.messages.push_back({"user", std::move(content)});
  return r;
}

std::vector<SlotHandle> validate_slot_response(const json& response,
                                               std::span<const SoftUnit> units,
                                               std::size_t slots_per_unit) {
  if (!response.contains("slots") || !response["slots"].is_array()) {
    throw ProtocolError("soft encode: response has no 'slots' array");
  }
  const auto& slots = response["slots"];
  if (slots.size() != units.size() * slots_per_unit) {
    throw ProtocolError("soft encode: expected " + std::to_string(units.size() * slots_per_unit) +
                        " slots, got " + std::to_string(slots.size()));
  }
  std::vector<SlotHandle> out;
  std::set<std::string> seen;
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto& s = slots[k];
    if (!s.is_object() || !s.contains("slot_id") || !s["slot_id"].is_string() ||
        !s.contains("unit_id") || !s.contains("index")) {
      throw ProtocolError("soft encode: malformed slot entry " + std::to_string(k));
    }
    const auto& expected_unit = units[k / slots_per_unit].unit_id;
    if (s["unit_id"] != expected_unit || s["index"] != k % slots_per_unit) {
      throw ProtocolError("soft encode: slot " + std::to_string(k) + " out of order");
    }
    std::string id = s["slot_id"].get<std::string>();
    if (!seen.insert(id).second) throw ProtocolError("soft encode: duplicate slot_id '" + id + "'");
    out.push_back({std::move(id), expected_unit, k});
  }
  return out;
}

HttpResponse HttpTransport::post(const EndpointRef& endpoint, const std::string& path,
                                 const std::string& body) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(endpoint.base_url, m, kUrl)) {
    throw InvalidArgument("unsupported base_url '" + endpoint.base_url + "'");
  }
  std::string prefix = m[2].matched ? m[2].str() : std::string{};
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

  httplib::Client client(m[1].str());
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
  const auto usecs =
      std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Headers headers;
  if (!endpoint.auth_env_var.empty()) {
    if (const char* key = std::getenv(endpoint.auth_env_var.c_str()); key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }
  auto res = client.Post(prefix + path, headers, body, "application/json");
  if (!res) {
    throw ServiceError("transport: " + httplib::to_string(res.error()) + " for " +
                           endpoint.base_url + path,
                       true);
  }
  return {res->status, res->body};
}

ResponseCache::ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

std::filesystem::path ResponseCache::entry_path(const std::string& key) const {
  return dir_ / (key + ".json");
}

std::optional<std::string> ResponseCache::get(const std::string& key) const {
  std::ifstream in(entry_path(key), std::ios::binary);
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    const json entry = json::parse(ss.str());
    if (entry.value("key", std::string{}) != key) return std::nullopt;
    return entry.at("value").get<std::string>();
  } catch (const json::exception&) {
    return std::nullopt;
  }
}

void ResponseCache::put(const std::string& key, std::string_view capability,
                        const std::string& value) {
  const json entry{{"key", key},
                   {"capability", std::string(capability)},
                   {"created_at", utc_timestamp()},
                   {"value", value}};
  std::ostringstream tmp_name;
  tmp_name << key << ".tmp." << std::this_thread::get_id();
  const auto tmp = dir_ / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << entry.dump();
    if (!out) throw std::runtime_error("cache: cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, entry_path(key));
}

std::string cache_key(const EndpointRef& endpoint, std::string_view capability,
                      const json& payload) {
  // nlohmann::json objects are key-sorted, so dump() is canonical.
  const json keyed{{"endpoint", endpoint.model_name},
                   {"capability", std::string(capability)},
                   {"payload", payload}};
  return sha256_hex(keyed.dump());
}

class Gateway::Limiter {
 public:
  explicit Limiter(std::size_t n) : available_(n) {}
  void acquire() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return available_ > 0; });
    --available_;
  }
  void release() {
    {
      std::lock_guard lock(mu_);
      ++available_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t available_;
};

Gateway::Gateway(std::shared_ptr<Transport> transport, std::shared_ptr<const Tokenizer> tokenizer,
                 GatewayOptions options)
    : transport_(std::move(transport)), tokenizer_(std::move(tokenizer)), options_(std::move(options)) {
  if (!tokenizer_) tokenizer_ = std::make_shared<ApproxTokenizer>();
  if (options_.cache_dir) cache_ = std::make_unique<ResponseCache>(*options_.cache_dir);
}

Gateway::~Gateway() = default;

Gateway::Stats Gateway::stats() const { return {network_calls_.load(), cache_hits_.load()}; }

Gateway::Limiter& Gateway::limiter_for(const EndpointRef& endpoint) {
  std::lock_guard lock(mu_);
  auto& slot = limiters_[endpoint.base_url + "|" + endpoint.model_name];
  if (!slot) slot = std::make_unique<Limiter>(endpoint.max_in_flight);
  return *slot;
}

std::string Gateway::slot_scope(const EndpointRef& endpoint) const { return endpoint.base_url; }

std::string Gateway::request(const EndpointRef& endpoint, std::string_view capability,
                             const std::string& path, const json& payload) {
  endpoint.validate();
  const std::string key = cache_key(endpoint, capability, payload);
  if (cache_) {
    if (auto hit = cache_->get(key)) {
      ++cache_hits_;
      return *hit;
    }
  }
  if (options_.offline) {
    throw ServiceError(std::string(capability) + ": offline mode and no cached response", false);
  }
  if (!transport_) throw ServiceError(std::string(capability) + ": no transport configured", false);

  Limiter& limiter = limiter_for(endpoint);
  const std::string body = payload.dump();
  auto backoff = options_.retry.initial_backoff;
  std::string last_error;
  for (int attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(backoff);
      const auto next = std::chrono::duration_cast<std::chrono::milliseconds>(
          backoff * options_.retry.multiplier);
      backoff = std::min(next, options_.retry.max_backoff);
    }
    HttpResponse res;
    limiter.acquire();
    try {
      ++network_calls_;
      res = transport_->post(endpoint, path, body);
    } catch (const ServiceError& e) {
      limiter.release();
      if (!e.retryable()) throw;
      last_error = e.what();
      continue;
    } catch (...) {
      limiter.release();
      throw;
    }
    limiter.release();

    if (res.status >= 200 && res.status < 300) {
      if (cache_) cache_->put(key, capability, res.body);
      return res.body;
    }
    if (res.status >= 400 && res.status < 500) throw_client_error(res.status, res.body, capability);
    last_error = "HTTP " + std::to_string(res.status);
  }
  throw ServiceError(std::string(capability) + ": giving up after " +
                         std::to_string(endpoint.max_retries + 1) + " attempts (" + last_error + ")",
                     true);
}

ChatResult Gateway::chat(const EndpointRef& endpoint, const ChatRequest& req) {
  const auto limit = req.input_truncation ? req.input_truncation : endpoint.input_truncation;
  json messages = json::array();
  std::size_t used = 0;
  for (const auto& m : req.messages) {
    std::string content = m.content;
    if (limit) {
      const std::size_t remaining = *limit > used ? *limit - used : 0;
      content = truncate_to_tokens(content, *tokenizer_, remaining);
    }
    used += tokenizer_->count(content);
    messages.push_back({{"role", m.role}, {"content", std::move(content)}});
  }
  const json payload{{"model", endpoint.model_name},
                     {"messages", std::move(messages)},
                     {"temperature", req.temperature},
                     {"max_tokens", req.max_new_tokens}};
  const json j = parse_body(request(endpoint, "chat", "/chat/completions", payload), "chat");
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
    throw ProtocolError("chat: response has no choices");
  }
  const auto& choice = j["choices"][0];
  ChatResult out;
  if (choice.contains("message") && choice["message"].contains("content") &&
      choice["message"]["content"].is_string()) {
    out.text = choice["message"]["content"].get<std::string>();
  } else if (!(choice.contains("message") && choice["message"].contains("content") &&
               choice["message"]["content"].is_null())) {
    throw ProtocolError("chat: choice has no message content");
  }
  out.prompt_tokens = usage_or(j, "prompt_tokens", used);
  out.completion_tokens = usage_or(j, "completion_tokens", tokenizer_->count(out.text));
  return out;
}

LogprobResult Gateway::token_logprobs(const EndpointRef& endpoint, std::string_view condition,
                                      std::string_view continuation) {
  if (continuation.empty()) throw InvalidArgument("token_logprobs: continuation is empty");
  const std::string prompt = std::string(condition) + std::string(continuation);
  const json payload{{"model", endpoint.model_name}, {"prompt", prompt}, {"max_tokens", 0},
                     {"echo", true},                 {"logprobs", 1},   {"temperature", 0.0}};
  const json j = parse_body(request(endpoint, "logprobs", "/completions", payload), "logprobs");
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
    throw ProtocolError("logprobs: response has no choices");
  }
  const auto& choice = j["choices"][0];
  if (!choice.contains("logprobs") || !choice["logprobs"].is_object()) {
    throw CapabilityError("logprobs: endpoint '" + endpoint.model_name +
                          "' returned no logprobs; hard_prune cannot use it");
  }
  const auto& lp = choice["logprobs"];
  if (!lp.contains("tokens") || !lp.contains("token_logprobs") ||
      lp["tokens"].size() != lp["token_logprobs"].size()) {
    throw ProtocolError("logprobs: tokens and token_logprobs disagree");
  }
  const auto& toks = lp["tokens"];
  const auto& vals = lp["token_logprobs"];
  std::vector<std::size_t> offsets;
  if (lp.contains("text_offset") && lp["text_offset"].is_array()) {
    if (lp["text_offset"].size() != toks.size()) throw ProtocolError("logprobs: bad text_offset");
    for (const auto& o : lp["text_offset"]) offsets.push_back(o.get<std::size_t>());
  } else {
    std::size_t pos = 0;
    for (const auto& t : toks) {
      offsets.push_back(pos);
      pos += t.get<std::string>().size();
    }
  }

  LogprobResult out;
  out.condition_hash = sha256_hex(condition);
  const std::size_t boundary = condition.size();
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const std::string text = toks[i].get<std::string>();
    if (offsets[i] + text.size() <= boundary && !(offsets[i] >= boundary)) continue;
    out.tokens.push_back(text);
    out.logprobs.push_back(vals[i].is_number() ? vals[i].get<double>()
                                               : std::numeric_limits<double>::quiet_NaN());
    out.offsets.push_back(offsets[i] > boundary ? offsets[i] - boundary : 0);
  }
  return out;
}

TokenVectors Gateway::token_embeddings(const EndpointRef& endpoint, std::string_view text) {
  if (text.empty()) throw InvalidArgument("token_embeddings: text is empty");
  const json payload{{"model", endpoint.model_name}, {"input", std::string(text)}};
  const json j =
      parse_body(request(endpoint, "embeddings", "/token_embeddings", payload), "embeddings");
  if (!j.contains("tokens") || !j.contains("embeddings") || !j["tokens"].is_array() ||
      !j["embeddings"].is_array() || j["tokens"].size() != j["embeddings"].size()) {
    throw ProtocolError("embeddings: tokens and embeddings disagree");
  }
  TokenVectors out;
  const std::size_t n = j["tokens"].size();
  const std::size_t dim = n ? j["embeddings"][0].size() : 0;
  out.vectors.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i) {
    out.tokens.push_back(j["tokens"][i].get<std::string>());
    const auto& row = j["embeddings"][i];
    if (row.size() != dim) throw ProtocolError("embeddings: ragged vectors in one response");
    for (std::size_t k = 0; k < dim; ++k) {
      out.vectors(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k].get<double>();
    }
  }
  if (n > 0) {
    std::lock_guard lock(mu_);
    auto [it, inserted] = embedding_dims_.emplace(endpoint.model_name, dim);
    if (!inserted && it->second != dim) {
      throw ProtocolError("embeddings: dimension changed from " + std::to_string(it->second) +
                          " to " + std::to_string(dim));
    }
  }
  normalize_rows(out.vectors);
  return out;
}

ChatResult Gateway::generate_with_slots(const EndpointRef& endpoint,
                                        std::span<const TemplateSegment> segments,
                                        const ChatRequest& req) {
  std::size_t n_slots = 0;
  for (const auto& seg : segments) {
    if (const auto* slot = std::get_if<SlotRef>(&seg)) {
      ++n_slots;
      std::lock_guard lock(mu_);
      if (!issued_slots_.count(slot_scope(endpoint) + "|" + slot->slot_id)) {
        throw ProtocolError("generate_with_slots: unknown slot_id '" + slot->slot_id + "'");
      }
    }
  }
  if (n_slots == 0) {
    std::string text;
    for (const auto& seg : segments) text += std::get<TemplateLiteral>(seg).text;
    ChatRequest plain = req;
    plain.messages = {{"user", std::move(text)}};
    return chat(endpoint, plain);
  }

  const auto limit = req.input_truncation ? req.input_truncation : endpoint.input_truncation;
  json wire = json::array();
  std::size_t used = 0;
  for (const auto& seg : segments) {
    if (limit && used >= *limit) break;
    if (const auto* lit = std::get_if<TemplateLiteral>(&seg)) {
      std::string text = limit ? truncate_to_tokens(lit->text, *tokenizer_, *limit - used) : lit->text;
      used += tokenizer_->count(text);
      wire.push_back({{"text", std::move(text)}});
    } else {
      ++used;
      wire.push_back({{"slot", std::get<SlotRef>(seg).slot_id}});
    }
  }
  const json payload{{"model", endpoint.model_name},
                     {"segments", std::move(wire)},
                     {"temperature", req.temperature},
                     {"max_tokens", req.max_new_tokens}};
  const json j =
      parse_body(request(endpoint, "slot_generate", "/soft/generate", payload), "slot_generate");
  if (!j.contains("text") || !j["text"].is_string()) {
    throw ProtocolError("slot_generate: response has no text");
  }
  ChatResult out;
  out.text = j["text"].get<std::string>();
  out.prompt_tokens = usage_or(j, "prompt_tokens", used);
  out.completion_tokens = usage_or(j, "completion_tokens", tokenizer_->count(out.text));
  return out;
}

std::vector<SlotHandle> Gateway::encode_soft(const EndpointRef& endpoint,
                                             std::span<const SoftUnit> units,
                                             std::size_t slots_per_unit) {
  if (slots_per_unit == 0) throw InvalidArgument("encode_soft: slots_per_unit must be >= 1");
  json wire_units = json::array();
  for (const auto& u : units) {
    if (is_blank(u.text)) throw InvalidArgument("encode_soft: unit '" + u.unit_id + "' is empty");
    std::string text = endpoint.input_truncation
                           ? truncate_to_tokens(u.text, *tokenizer_, *endpoint.input_truncation)
                           : u.text;
    wire_units.push_back({{"unit_id", u.unit_id}, {"text", std::move(text)}});
  }
  const json payload{{"version", std::string(kSoftProtocolVersion)},
                     {"model", endpoint.model_name},
                     {"units", std::move(wire_units)},
                     {"slots_per_unit", slots_per_unit}};
  const json j = parse_body(request(endpoint, "soft_encode", "/soft/encode", payload), "soft_encode");
  auto handles = validate_slot_response(j, units, slots_per_unit);
  std::lock_guard lock(mu_);
  for (const auto& h : handles) issued_slots_.insert(slot_scope(endpoint) + "|" + h.slot_id);
  return handles;
}

std::vector<Token> Gateway::tokenize(const EndpointRef& endpoint, std::string_view text) {
  const json payload{{"model", endpoint.model_name}, {"text", std::string(text)}};
  const json j = parse_body(request(endpoint, "tokenize", "/tokenize", payload), "tokenize");
  if (!j.contains("tokens") || !j["tokens"].is_array()) {
    throw ProtocolError("tokenize: response has no tokens");
  }
  std::vector<Token> out;
  for (const auto& t : j["tokens"]) {
    Token tok{t.at("text").get<std::string>(), t.at("start").get<std::size_t>(),
              t.at("end").get<std::size_t>()};
    if (tok.begin > tok.end || tok.end > text.size()) throw ProtocolError("tokenize: bad offsets");
    out.push_back(std::move(tok));
  }
  return out;
}

}  // namespace pcev
