#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <thread>

#include "ctox/backend.hpp"

namespace httplib {
class Server;
}

namespace ctox {

// Wire protocol shared with the inference sidecar:
//   POST /v1/classify   {"texts":[...], "attributes":[...]}  -> {"scores":[[p,...],...]}
//   POST /v1/mask_fill  {"tokens":[...], "mask_index":i, "top_k":k}
//                       -> {"candidates":[{"token":s,"prob":f},...]}
//   GET  /health        -> {"status":"ok"}
struct HttpOptions {
  std::chrono::milliseconds timeout{10000};
  int max_attempts = 3;
  std::chrono::milliseconds retry_backoff{200};
  std::size_t max_batch = 64;
  // Sent as "Authorization: Bearer <token>" when non-empty.
  std::string bearer_token;
  // Attribute set to declare without asking the server.
  std::vector<AttributeId> attributes = default_attributes();
};

// Reads the bearer token from CTOX_BACKEND_TOKEN if set.
HttpOptions http_options_from_env(HttpOptions base = {});

class HttpClassifier final : public ClassifierBackend {
 public:
  explicit HttpClassifier(std::string base_url, HttpOptions options = {});

  std::string id() const override { return "http:" + base_url_; }
  std::vector<AttributeId> attributes() const override { return options_.attributes; }
  ScoreMatrix classify_unchecked(std::span<const std::string> texts,
                                 std::span<const AttributeId> attributes) const override;

 private:
  std::string base_url_;
  HttpOptions options_;
};

class HttpMaskFill final : public MaskFillBackend {
 public:
  explicit HttpMaskFill(std::string base_url, HttpOptions options = {});

  std::string id() const override { return "http:" + base_url_; }
  std::vector<Candidate> candidates(const TokenSequence& seq, std::size_t mask_index,
                                    std::size_t top_k) const override;

 private:
  std::string base_url_;
  HttpOptions options_;
};

// True when GET /health answers 200 with status "ok".
bool http_health(const std::string& base_url, const HttpOptions& options = {});

// Serves in-process backends over the wire protocol. Used to expose stub or
// file-backed scores to HTTP clients and to test the client side.
class BackendServer {
 public:
  BackendServer(std::shared_ptr<const ClassifierBackend> classifier,
                std::shared_ptr<const MaskFillBackend> mask_fill);
  ~BackendServer();

  BackendServer(const BackendServer&) = delete;
  BackendServer& operator=(const BackendServer&) = delete;

  // Binds to host on an ephemeral port (or the given one) and serves on a
  // background thread. Returns the bound port.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  // Blocks until the background server started by start() exits.
  void wait();

  // Blocks serving on the calling thread.
  void listen(const std::string& host, int port);

  std::string base_url() const;

 private:
  void install_routes();

  std::shared_ptr<const ClassifierBackend> classifier_;
  std::shared_ptr<const MaskFillBackend> mask_fill_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  int port_ = 0;
};

}  // namespace ctox
