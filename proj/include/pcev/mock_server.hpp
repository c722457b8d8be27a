#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

namespace httplib {
class Server;
}

namespace pcev {

struct MockOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  // When false, /completions answers without logprobs.
  bool logprobs = true;
  std::size_t embedding_dim = 64;
  std::uint64_t embedding_seed = 0;
};

// Deterministic stand-in for the chat, completions, token-embedding,
// tokenize and soft-compression services, all under /v1.
//
// Chat answers are keyed on the prompt shape: claim listing, True/False
// verification, entity extraction, summaries, QA spans and math answers.
// A prompt containing "[[mock:empty]]" gets an empty answer and one
// containing "[[mock:fail]]" gets HTTP 500.
class MockServer {
 public:
  explicit MockServer(MockOptions options = {});
  ~MockServer();

  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  // Binds and serves on a background thread; returns the bound port.
  int start();
  void stop();
  // Blocks until stop() is called from another thread or a signal handler.
  void wait();

  int port() const { return port_; }
  std::string base_url() const;
  std::uint64_t requests() const { return requests_; }

 private:
  struct Slot {
    std::string unit_text;
    std::size_t index = 0;
    std::size_t slots_per_unit = 1;
  };

  void install_routes();
  std::string slot_gist(const std::string& slot_id) const;

  MockOptions options_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<std::uint64_t> requests_{0};

  mutable std::mutex mu_;
  std::map<std::string, Slot> slots_;
};

// Chat reply the mock gives for one prompt. Exposed for tests.
std::string mock_chat_reply(const std::string& prompt);

}  // namespace pcev
