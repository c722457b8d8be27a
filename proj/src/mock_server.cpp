#include "pcev/mock_server.hpp"

#include <cmath>
#include <cstdio>
#include <set>

// Eigen before httplib: <resolv.h> defines an _res macro that breaks Eigen.
#include "pcev/digest.hpp"
#include "pcev/embedding.hpp"
#include "pcev/errors.hpp"
#include "pcev/metrics.hpp"
#include "pcev/preservation.hpp"
#include "pcev/prng.hpp"
#include "pcev/text.hpp"

#include <httplib.h>
#include <json.hpp>

namespace pcev {

namespace {

using nlohmann::json;

const std::set<std::string, std::less<>> kStopwords = {
    "a",  "an",   "the", "of",  "in",   "on",  "at",  "to",   "for",  "and", "or",
    "is", "was",  "are", "were", "be",  "by",  "with", "as",  "that", "this", "it",
    "he", "she",  "they", "his", "her", "its", "from", "what", "who", "when", "where",
    "which", "how", "did", "do", "does", "has", "had", "have", "not", "but"};

bool has(std::string_view s, std::string_view needle) { return s.find(needle) != std::string_view::npos; }

// Text between the first `open` and the next `close` after it; empty when
// either marker is missing.
std::string between(std::string_view s, std::string_view open, std::string_view close) {
  const auto a = s.find(open);
  if (a == std::string_view::npos) return {};
  const auto start = a + open.size();
  const auto b = close.empty() ? s.size() : s.find(close, start);
  if (b == std::string_view::npos) return std::string(s.substr(start));
  return std::string(s.substr(start, b - start));
}

std::string after_last(std::string_view s, std::string_view marker) {
  const auto a = s.rfind(marker);
  if (a == std::string_view::npos) return std::string(s);
  return std::string(s.substr(a + marker.size()));
}

std::set<std::string> content_words(std::string_view text) {
  std::set<std::string> out;
  for (auto& w : normalize_answer(text)) {
    if (!kStopwords.count(w)) out.insert(std::move(w));
  }
  return out;
}

std::string reply_claims(const std::string& prompt) {
  const std::string summary = between(prompt, "Summary: ", " List of atomic claims:");
  std::string out;
  for (const auto& s : split_sentences(summary)) out += "- " + s + "\n";
  return out;
}

std::string reply_verdict(const std::string& prompt) {
  const auto context = normalize_answer(between(prompt, "Context: ", " Statement: "));
  const std::set<std::string> ctx(context.begin(), context.end());
  const auto statement = content_words(between(prompt, " Statement: ", " Question: Based"));
  if (statement.empty()) return "False";
  for (const auto& w : statement) {
    if (!ctx.count(w)) return "False";
  }
  return "True";
}

std::string reply_entities(const std::string& prompt) {
  const std::string text = between(prompt, "Text: ", " Entities:");
  std::string out;
  RuleEntityExtractor rule;
  for (const auto& m : rule.extract(text)) {
    out += json{{"surface", m.surface}, {"type", std::string(to_string(m.etype))}}.dump() + "\n";
  }
  return out;
}

std::string reply_summary(const std::string& prompt) {
  const auto sentences = split_sentences(between(prompt, "Article: ", " [/INST]"));
  std::vector<std::string> head(sentences.begin(),
                                sentences.begin() + std::min<std::size_t>(2, sentences.size()));
  return join(head, " ");
}

std::string format_number(double v) {
  char buf[64];
  if (std::floor(v) == v && std::fabs(v) < 1e15) {
    std::snprintf(buf, sizeof buf, "%.0f", v);
  } else {
    std::snprintf(buf, sizeof buf, "%g", v);
  }
  return buf;
}

std::string reply_math(const std::string& prompt) {
  const std::string question = after_last(between(prompt, "", " [/INST]"), "Question: ");
  const auto n = last_number(question);
  return "Working through the steps gives the result.\n#### " + (n ? format_number(*n) : "0");
}

std::string reply_qa(const std::string& prompt) {
  const std::string head = between(prompt, "", " [/INST]");
  std::string background;
  std::string question;
  if (has(head, "Conversational context: ")) {
    background = between(head, "Background: ", "\n\nConversational context: ");
    question = after_last(after_last(head, "Conversational context: "), "\n");
  } else {
    background = between(head, "Background: ", "\n\nQuestion: ");
    question = after_last(head, "Question: ");
  }
  // Words match on their first four characters so "married" answers "marry".
  auto stems = [](std::string_view text) {
    std::set<std::string> out;
    for (const auto& w : content_words(text)) out.insert(w.substr(0, 4));
    return out;
  };
  const auto q = stems(question);
  std::vector<std::string> best;
  std::size_t best_score = 0;
  for (const auto& s : split_sentences(background)) {
    std::size_t score = 0;
    for (const auto& w : stems(s)) score += q.count(w);
    if (score > best_score) {
      best_score = score;
      best.clear();
    }
    if (score == best_score && score > 0) best.push_back(s);
  }
  return best_score ? join(best, " ") : "unknown";
}

// Slot gist: the first 6 * slots_per_unit words of the unit with every digit
// shifted by 2, so reconstructions keep names and lose exact numbers.
std::string gist_of(const std::string& text, std::size_t slots_per_unit) {
  std::vector<std::string> words;
  std::size_t i = 0;
  const std::size_t limit = 6 * slots_per_unit;
  while (i < text.size() && words.size() < limit) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t j = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > j) words.emplace_back(text.substr(j, i - j));
  }
  std::string out = join(words, " ");
  for (char& c : out) {
    if (c >= '0' && c <= '9') c = static_cast<char>('0' + (c - '0' + 2) % 10);
  }
  return out;
}

httplib::Server::Handler json_handler(std::atomic<std::uint64_t>& counter,
                                      std::function<json(const json&)> fn) {
  return [&counter, fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
    ++counter;
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", {{"type", "protocol_error"}, {"message", e.what()}}}}.dump(),
                      "application/json");
      return;
    }
    if (has(req.body, "[[mock:fail]]")) {
      res.status = 500;
      res.set_content(json{{"error", {{"type", "server_error"}, {"message", "injected"}}}}.dump(),
                      "application/json");
      return;
    }
    try {
      res.set_content(fn(body).dump(), "application/json");
    } catch (const ProtocolError& e) {
      res.status = 400;
      res.set_content(json{{"error", {{"type", "protocol_error"}, {"message", e.what()}}}}.dump(),
                      "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", {{"type", "invalid_request"}, {"message", e.what()}}}}.dump(),
                      "application/json");
    }
  };
}

}  // namespace

std::string mock_chat_reply(const std::string& prompt) {
  if (has(prompt, "[[mock:empty]]")) return "";
  if (has(prompt, "List of atomic claims:")) return reply_claims(prompt);
  if (has(prompt, "is the above statement")) return reply_verdict(prompt);
  if (has(prompt, "Output one JSON object per line")) return reply_entities(prompt);
  if (has(prompt, "Briefly summarize this article")) return reply_summary(prompt);
  if (has(prompt, "Answer the math question")) return reply_math(prompt);
  if (has(to_lower_ascii(prompt), "answer the question")) return reply_qa(prompt);
  return "OK";
}

MockServer::MockServer(MockOptions options)
    : options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

MockServer::~MockServer() { stop(); }

std::string MockServer::base_url() const {
  return "http://" + options_.host + ":" + std::to_string(port_) + "/v1";
}

int MockServer::start() {
  if (options_.port == 0) {
    port_ = server_->bind_to_any_port(options_.host);
  } else {
    port_ = server_->bind_to_port(options_.host, options_.port) ? options_.port : -1;
  }
  if (port_ <= 0) throw ServiceError("mock server: cannot bind " + options_.host, false);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void MockServer::stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

void MockServer::wait() {
  if (thread_.joinable()) thread_.join();
}

std::string MockServer::slot_gist(const std::string& slot_id) const {
  std::lock_guard lock(mu_);
  auto it = slots_.find(slot_id);
  if (it == slots_.end()) throw ProtocolError("unknown slot_id '" + slot_id + "'");
  if (it->second.index != 0) return {};
  return gist_of(it->second.unit_text, it->second.slots_per_unit);
}

void MockServer::install_routes() {
  auto& s = *server_;
  s.Post("/v1/chat/completions", json_handler(requests_, [](const json& body) {
           std::string prompt;
           for (const auto& m : body.at("messages")) {
             if (m.value("role", "") == "user") prompt = m.at("content").get<std::string>();
           }
           const std::string text = mock_chat_reply(prompt);
           ApproxTokenizer tok;
           return json{{"object", "chat.completion"},
                       {"model", body.value("model", "")},
                       {"choices",
                        {{{"index", 0},
                          {"message", {{"role", "assistant"}, {"content", text}}},
                          {"finish_reason", "stop"}}}},
                       {"usage",
                        {{"prompt_tokens", tok.count(prompt)},
                         {"completion_tokens", tok.count(text)}}}};
         }));

  s.Post("/v1/completions", json_handler(requests_, [this](const json& body) {
           const std::string prompt = body.at("prompt").get<std::string>();
           json choice{{"index", 0}, {"text", body.value("echo", false) ? prompt : ""}};
           if (options_.logprobs) {
             ApproxTokenizer tok;
             json tokens = json::array(), values = json::array(), offsets = json::array();
             bool first = true;
             for (const auto& t : tok.tokenize(prompt)) {
               // Stopwords and punctuation are cheap; other words cost
               // between 1 and 5 nats depending on their hash.
               const std::string lower = to_lower_ascii(t.text);
               const bool cheap = kStopwords.count(lower) || normalize_answer(lower).empty();
               const double lp =
                   cheap ? -0.1 : -(1.0 + static_cast<double>(fnv1a64(lower) % 1000) / 250.0);
               tokens.push_back(t.text);
               values.push_back(first ? json(nullptr) : json(lp));
               offsets.push_back(t.begin);
               first = false;
             }
             choice["logprobs"] = {
                 {"tokens", tokens}, {"token_logprobs", values}, {"text_offset", offsets}};
           }
           return json{{"object", "text_completion"},
                       {"model", body.value("model", "")},
                       {"choices", json::array({choice})}};
         }));

  s.Post("/v1/token_embeddings", json_handler(requests_, [this](const json& body) {
           HashEmbedder embedder(options_.embedding_dim, options_.embedding_seed);
           const auto tv = embedder.embed(body.at("input").get<std::string>());
           json rows = json::array();
           for (Eigen::Index i = 0; i < tv.vectors.rows(); ++i) {
             json row = json::array();
             for (Eigen::Index k = 0; k < tv.vectors.cols(); ++k) row.push_back(tv.vectors(i, k));
             rows.push_back(std::move(row));
           }
           return json{{"tokens", tv.tokens}, {"embeddings", rows}};
         }));

  s.Post("/v1/tokenize", json_handler(requests_, [](const json& body) {
           ApproxTokenizer tok;
           json out = json::array();
           for (const auto& t : tok.tokenize(body.at("text").get<std::string>())) {
             out.push_back({{"text", t.text}, {"start", t.begin}, {"end", t.end}});
           }
           return json{{"tokens", out}};
         }));

  s.Post("/v1/soft/encode", json_handler(requests_, [this](const json& body) {
           if (body.value("version", "") != "1") {
             throw ProtocolError("unsupported soft protocol version");
           }
           const std::size_t spu = body.at("slots_per_unit").get<std::size_t>();
           if (spu == 0) throw ProtocolError("slots_per_unit must be >= 1");
           json slots = json::array();
           std::lock_guard lock(mu_);
           for (const auto& u : body.at("units")) {
             const std::string unit_id = u.at("unit_id").get<std::string>();
             const std::string text = u.at("text").get<std::string>();
             const std::string digest = sha256_hex(unit_id + "\n" + text).substr(0, 16);
             for (std::size_t k = 0; k < spu; ++k) {
               const std::string id = "s" + digest + "." + std::to_string(k);
               slots_[id] = Slot{text, k, spu};
               slots.push_back({{"slot_id", id}, {"unit_id", unit_id}, {"index", k}});
             }
           }
           return json{{"version", "1"}, {"slots", slots}};
         }));

  s.Post("/v1/soft/generate", json_handler(requests_, [this](const json& body) {
           std::string prompt;
           std::vector<std::string> gists;
           for (const auto& seg : body.at("segments")) {
             if (seg.contains("slot")) {
               std::string g = slot_gist(seg.at("slot").get<std::string>());
               if (g.empty()) continue;
               if (!prompt.empty() && prompt.back() != ' ' && prompt.back() != '\n') prompt += ' ';
               prompt += g;
               gists.push_back(std::move(g));
             } else {
               prompt += seg.at("text").get<std::string>();
             }
           }
           // Reconstruction prompts carry no instruction block: restate the
           // slot content.
           const std::string text = has(prompt, "[INST]") || has(prompt, "[[mock:")
                                        ? mock_chat_reply(prompt)
                                        : join(gists, " ");
           ApproxTokenizer tok;
           return json{{"text", text},
                       {"usage",
                        {{"prompt_tokens", tok.count(prompt)},
                         {"completion_tokens", tok.count(text)}}}};
         }));
}

}  // namespace pcev
