#include "ctox/http_backend.hpp"

#include <cstdlib>

#include "httplib.h"
#include "json.hpp"

namespace ctox {

namespace {

using nlohmann::json;

httplib::Client make_client(const std::string& base_url, const HttpOptions& options) {
  httplib::Client client(base_url);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  if (!options.bearer_token.empty()) client.set_bearer_token_auth(options.bearer_token);
  return client;
}

// POSTs body to path, retrying transport failures and 5xx answers.
json post_json(const std::string& base_url, const HttpOptions& options, const std::string& path,
               const json& body) {
  const std::string payload = body.dump();
  std::string last_error;
  const int attempts = std::max(1, options.max_attempts);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(options.retry_backoff * attempt);
    auto client = make_client(base_url, options);
    auto res = client.Post(path, payload, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status == 422) {
      throw InputError(base_url + path + ": rejected attribute: " + res->body);
    }
    if (res->status != 200) {
      throw BackendError(base_url + path + ": HTTP " + std::to_string(res->status) + ": " +
                         res->body);
    }
    json out = json::parse(res->body, nullptr, false);
    if (out.is_discarded()) throw BackendError(base_url + path + ": response is not JSON");
    return out;
  }
  throw BackendError(base_url + path + ": unreachable after " + std::to_string(attempts) +
                     " attempts (" + last_error + ")");
}

}  // namespace

HttpOptions http_options_from_env(HttpOptions base) {
  if (const char* token = std::getenv("CTOX_BACKEND_TOKEN"); token && *token) {
    base.bearer_token = token;
  }
  return base;
}

HttpClassifier::HttpClassifier(std::string base_url, HttpOptions options)
    : base_url_(std::move(base_url)), options_(std::move(options)) {}

ScoreMatrix HttpClassifier::classify_unchecked(std::span<const std::string> texts,
                                               std::span<const AttributeId> attributes) const {
  ScoreMatrix out;
  out.reserve(texts.size());
  const std::size_t batch = std::max<std::size_t>(1, options_.max_batch);
  for (std::size_t start = 0; start < texts.size(); start += batch) {
    const auto chunk = texts.subspan(start, std::min(batch, texts.size() - start));
    json body = {{"texts", std::vector<std::string>(chunk.begin(), chunk.end())},
                 {"attributes", std::vector<AttributeId>(attributes.begin(), attributes.end())}};
    const json res = post_json(base_url_, options_, "/v1/classify", body);
    if (!res.contains("scores") || !res["scores"].is_array()) {
      throw BackendError(id() + ": response missing \"scores\"");
    }
    try {
      for (const auto& row : res["scores"]) out.push_back(row.get<std::vector<double>>());
    } catch (const json::exception& e) {
      throw BackendError(id() + ": malformed scores: " + e.what());
    }
  }
  return out;
}

HttpMaskFill::HttpMaskFill(std::string base_url, HttpOptions options)
    : base_url_(std::move(base_url)), options_(std::move(options)) {}

std::vector<Candidate> HttpMaskFill::candidates(const TokenSequence& seq, std::size_t mask_index,
                                                std::size_t top_k) const {
  std::vector<std::string> tokens;
  tokens.reserve(seq.size());
  for (const auto& t : seq.tokens()) tokens.push_back(t.str());
  json body = {{"tokens", tokens}, {"mask_index", mask_index}, {"top_k", top_k}};
  const json res = post_json(base_url_, options_, "/v1/mask_fill", body);
  if (!res.contains("candidates") || !res["candidates"].is_array()) {
    throw BackendError(id() + ": response missing \"candidates\"");
  }
  std::vector<Candidate> out;
  try {
    for (const auto& c : res["candidates"]) {
      out.push_back({Token(c.at("token").get<std::string>()), c.at("prob").get<double>()});
    }
  } catch (const std::exception& e) {
    throw BackendError(id() + ": malformed candidate: " + e.what());
  }
  return out;
}

bool http_health(const std::string& base_url, const HttpOptions& options) {
  auto client = make_client(base_url, options);
  auto res = client.Get("/health");
  if (!res || res->status != 200) return false;
  json body = json::parse(res->body, nullptr, false);
  return !body.is_discarded() && body.value("status", "") == "ok";
}

// ---------------------------------------------------------------------------

BackendServer::BackendServer(std::shared_ptr<const ClassifierBackend> classifier,
                             std::shared_ptr<const MaskFillBackend> mask_fill)
    : classifier_(std::move(classifier)),
      mask_fill_(std::move(mask_fill)),
      server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

BackendServer::~BackendServer() { stop(); }

void BackendServer::install_routes() {
  auto reply = [](httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  };

  server_->Get("/health", [reply](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"status", "ok"}});
  });

  server_->Post("/v1/classify", [this, reply](const httplib::Request& req,
                                              httplib::Response& res) {
    if (!classifier_) return reply(res, 404, {{"error", "no classifier"}});
    json body = json::parse(req.body, nullptr, false);
    std::vector<std::string> texts;
    std::vector<AttributeId> attrs;
    try {
      texts = body.at("texts").get<std::vector<std::string>>();
      attrs = body.at("attributes").get<std::vector<AttributeId>>();
    } catch (const std::exception& e) {
      return reply(res, 400, {{"error", std::string("malformed body: ") + e.what()}});
    }
    try {
      reply(res, 200, {{"scores", classify(*classifier_, texts, attrs)}});
    } catch (const InputError& e) {
      reply(res, 422, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  });

  server_->Post("/v1/mask_fill", [this, reply](const httplib::Request& req,
                                               httplib::Response& res) {
    if (!mask_fill_) return reply(res, 404, {{"error", "no mask-fill model"}});
    json body = json::parse(req.body, nullptr, false);
    std::vector<Token> tokens;
    std::size_t index = 0;
    std::size_t top_k = 0;
    try {
      for (const auto& t : body.at("tokens")) tokens.emplace_back(t.get<std::string>());
      index = body.at("mask_index").get<std::size_t>();
      top_k = body.at("top_k").get<std::size_t>();
    } catch (const std::exception& e) {
      return reply(res, 400, {{"error", std::string("malformed body: ") + e.what()}});
    }
    TokenSequence seq(std::move(tokens), {});
    seq = TokenSequence(seq.tokens(), seq.joined());
    try {
      json out = json::array();
      for (const auto& c : mask_fill(*mask_fill_, seq, index, top_k)) {
        out.push_back({{"token", c.token.str()}, {"prob", c.prob}});
      }
      reply(res, 200, {{"candidates", out}});
    } catch (const InputError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  });
}

int BackendServer::start(const std::string& host, int port) {
  host_ = host;
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ <= 0) throw BackendError("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void BackendServer::listen(const std::string& host, int port) {
  host_ = host;
  port_ = port;
  if (!server_->listen(host, port)) {
    throw BackendError("cannot listen on " + host + ":" + std::to_string(port));
  }
}

void BackendServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void BackendServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string BackendServer::base_url() const {
  return "http://" + host_ + ":" + std::to_string(port_);
}

}  // namespace ctox
