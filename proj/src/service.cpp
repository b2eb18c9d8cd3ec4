#include "semcache/service.hpp"

#include <chrono>

#include <httplib.h>
#include <json.hpp>

#include "semcache/errors.hpp"
#include "semcache/pipeline.hpp"
#include "semcache/synthetic.hpp"

namespace semcache {

using nlohmann::json;

void ServiceConfig::validate() const {
  cache.validate();
  const bool fixtures = !embeddings.empty();
  if (fixtures == embedding_endpoint.has_value()) {
    throw ValidationError(
        "configure exactly one embedding source: fixture files or an embedding endpoint");
  }
  if (backend != "mock" && !backend.starts_with("http://") && !backend.starts_with("https://")) {
    throw ValidationError("backend must be 'mock' or an http(s) URL, got '" + backend + "'");
  }
  listen_address();
}

std::pair<std::string, int> ServiceConfig::listen_address() const {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == listen.size()) {
    throw ValidationError("listen must be host:port, got '" + listen + "'");
  }
  int port = 0;
  try {
    std::size_t used = 0;
    port = std::stoi(listen.substr(colon + 1), &used);
    if (used != listen.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ValidationError("listen port is not a number: '" + listen + "'");
  }
  if (port < 0 || port > 65535) throw ValidationError("listen port out of range");
  return {listen.substr(0, colon), port};
}

// --- embedding sources ---------------------------------------------------------

FixtureEmbeddingSource::FixtureEmbeddingSource(EmbeddingSet representation,
                                               const QueryTexts& texts)
    : representation_(std::move(representation)) {
  const auto& ids = representation_.ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto it = texts.find(ids[i]);
    by_text_.emplace(it == texts.end() ? ids[i] : it->second, i);
  }
}

std::vector<float> FixtureEmbeddingSource::embed(const std::string& text) {
  const auto it = by_text_.find(text);
  if (it == by_text_.end()) {
    throw EmbeddingSourceError("no stored embedding for query text '" + text + "'");
  }
  const auto row = representation_.row(it->second);
  return {row.begin(), row.end()};
}

std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw ValidationError("not a URL: '" + url + "'");
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

namespace {

json post_json(const std::string& url, const json& body, const char* what) {
  const auto [base, path] = split_url(url);
  httplib::Client client(base);
  client.set_connection_timeout(5);
  client.set_read_timeout(60);
  auto res = client.Post(path, body.dump(), "application/json");
  if (!res) {
    throw std::runtime_error(std::string(what) + " unreachable at " + url + ": " +
                             httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw std::runtime_error(std::string(what) + " answered HTTP " + std::to_string(res->status));
  }
  return json::parse(res->body);
}

}  // namespace

HttpEmbeddingSource::HttpEmbeddingSource(std::string url, std::optional<Checkpoint> checkpoint)
    : url_(std::move(url)), checkpoint_(std::move(checkpoint)) {
  split_url(url_);
}

std::vector<float> HttpEmbeddingSource::embed(const std::string& text) {
  std::vector<float> v;
  try {
    const auto reply = post_json(url_, json{{"text", text}}, "embedding endpoint");
    v = reply.at("embedding").get<std::vector<float>>();
  } catch (const std::exception& e) {
    throw EmbeddingSourceError(e.what());
  }
  if (v.empty()) throw EmbeddingSourceError("embedding endpoint returned an empty vector");
  if (!checkpoint_) return v;
  try {
    const auto out = encode_one(*checkpoint_, normalized(v));
    return {out.values().begin(), out.values().end()};
  } catch (const Error& e) {
    throw EmbeddingSourceError(e.what());
  }
}

HttpBackend::HttpBackend(std::string url) : url_(std::move(url)) { split_url(url_); }

BackendResponse HttpBackend::complete(const std::string& query) {
  try {
    const auto reply = post_json(url_, json{{"query", query}}, "backend");
    BackendResponse r;
    r.text = reply.at("response").get<std::string>();
    r.prompt_tokens = reply.contains("prompt_tokens") ? reply["prompt_tokens"].get<std::uint64_t>()
                                                      : count_tokens(query);
    r.completion_tokens = reply.contains("completion_tokens")
                              ? reply["completion_tokens"].get<std::uint64_t>()
                              : count_tokens(r.text);
    return r;
  } catch (const std::exception& e) {
    throw BackendError(e.what());
  }
}

// --- service -------------------------------------------------------------------

CacheService::CacheService(std::unique_ptr<EmbeddingSource> source,
                           std::unique_ptr<LlmBackend> backend,
                           std::unique_ptr<SemanticCache> cache)
    : source_(std::move(source)), backend_(std::move(backend)), cache_(std::move(cache)) {}

QueryResult CacheService::query(const std::string& text) {
  const auto start = std::chrono::steady_clock::now();
  auto fail = [&] {
    std::lock_guard lock(stats_mutex_);
    ++stats_.errors;
  };
  std::vector<float> embedding;
  try {
    embedding = source_->embed(text);
  } catch (...) {
    fail();
    throw;
  }
  LookupOutcome outcome;
  try {
    outcome = cache_->lookup(embedding);
  } catch (const Error& e) {
    fail();
    throw EmbeddingSourceError(std::string("unusable embedding: ") + e.what());
  }
  QueryResult result;
  result.score = outcome.score;
  std::uint64_t tokens = 0;
  if (outcome.is_hit()) {
    result.hit = true;
    result.response = outcome.matched_entry->response_text;
    tokens = outcome.matched_entry->total_tokens();
  } else {
    BackendResponse resp;
    try {
      resp = backend_->complete(text);
    } catch (const BackendError&) {
      fail();
      throw;
    } catch (const std::exception& e) {
      fail();
      throw BackendError(e.what());
    }
    cache_->insert(text, embedding, resp.text, resp.prompt_tokens, resp.completion_tokens);
    result.response = std::move(resp.text);
    tokens = resp.prompt_tokens + resp.completion_tokens;
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::lock_guard lock(stats_mutex_);
  ++stats_.total_requests;
  if (result.hit) {
    ++stats_.hits;
    stats_.tokens_served_by_cache += tokens;
  } else {
    ++stats_.misses;
  }
  stats_.total_tokens += tokens;
  stats_.total_response_time += elapsed;
  return result;
}

ServiceStats CacheService::stats() const {
  ServiceStats s;
  {
    std::lock_guard lock(stats_mutex_);
    s = stats_;
  }
  const auto cs = cache_->stats();
  s.cache_size = cs.size;
  s.evictions = cs.evictions;
  return s;
}

std::unique_ptr<CacheService> make_service(const ServiceConfig& config) {
  config.validate();
  std::optional<Checkpoint> checkpoint;
  if (config.checkpoint) checkpoint = load_checkpoint(*config.checkpoint);

  std::unique_ptr<EmbeddingSource> source;
  std::size_t dim = 0;
  if (!config.embeddings.empty()) {
    std::vector<EmbeddingSet> sets;
    for (const auto& p : config.embeddings) sets.push_back(load_embedding_set(p));
    auto rep = checkpoint ? encoder_representation(*checkpoint, sets)
                          : fused_representation(sets, config.fusion);
    dim = rep.dim();
    const QueryTexts texts = config.texts ? load_texts(*config.texts) : QueryTexts{};
    source = std::make_unique<FixtureEmbeddingSource>(std::move(rep), texts);
  } else {
    if (checkpoint) dim = checkpoint->config.output_dim;
    source = std::make_unique<HttpEmbeddingSource>(*config.embedding_endpoint, checkpoint);
  }

  std::unique_ptr<LlmBackend> backend;
  if (config.backend == "mock") backend = std::make_unique<MockBackend>(config.mock);
  else backend = std::make_unique<HttpBackend>(config.backend);

  std::unique_ptr<SemanticCache> cache;
  if (config.snapshot && std::filesystem::exists(*config.snapshot)) {
    cache = SemanticCache::load_snapshot(*config.snapshot);
  } else {
    cache = std::make_unique<SemanticCache>(config.cache, dim);
  }
  return std::make_unique<CacheService>(std::move(source), std::move(backend), std::move(cache));
}

// --- HTTP ----------------------------------------------------------------------

struct HttpServer::Impl {
  CacheService& service;
  httplib::Server server;
  explicit Impl(CacheService& s) : service(s) {}
};

namespace {

void send_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(json{{"error", message}}.dump(), "application/json");
}

}  // namespace

HttpServer::HttpServer(CacheService& service) : impl_(std::make_unique<Impl>(service)) {
  auto& svc = impl_->service;
  impl_->server.Post("/query", [&svc](const httplib::Request& req, httplib::Response& res) {
    std::string text;
    try {
      const auto body = json::parse(req.body);
      text = body.at("query").get<std::string>();
    } catch (const std::exception&) {
      send_error(res, 400, "body must be a JSON object with a string field \"query\"");
      return;
    }
    try {
      const auto r = svc.query(text);
      json out{{"response", r.response}, {"cache", r.hit ? "hit" : "miss"}};
      if (r.score) out["score"] = *r.score;
      else out["score"] = nullptr;
      res.set_header("Cache", r.hit ? "hit" : "miss");
      res.set_content(out.dump(), "application/json");
    } catch (const EmbeddingSourceError& e) {
      send_error(res, 502, std::string("embedding source: ") + e.what());
    } catch (const BackendError& e) {
      send_error(res, 502, std::string("backend: ") + e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  });
  impl_->server.Get("/stats", [&svc](const httplib::Request&, httplib::Response& res) {
    const auto s = svc.stats();
    json out{{"total_requests", s.total_requests},
             {"hits", s.hits},
             {"misses", s.misses},
             {"errors", s.errors},
             {"total_tokens", s.total_tokens},
             {"tokens_served_by_cache", s.tokens_served_by_cache},
             {"cache_size", s.cache_size},
             {"evictions", s.evictions}};
    if (s.total_requests) {
      out["hit_ratio"] = 100.0 * static_cast<double>(s.hits) / static_cast<double>(s.total_requests);
      out["mean_response_time"] = s.total_response_time / static_cast<double>(s.total_requests);
    } else {
      out["hit_ratio"] = nullptr;
      out["mean_response_time"] = nullptr;
    }
    if (s.total_tokens) {
      out["token_saving_ratio"] = 100.0 * static_cast<double>(s.tokens_served_by_cache) /
                                  static_cast<double>(s.total_tokens);
    } else {
      out["token_saving_ratio"] = nullptr;
    }
    res.set_content(out.dump(), "application/json");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw IoError("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw IoError("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace semcache
