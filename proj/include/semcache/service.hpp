#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "semcache/embedding_io.hpp"
#include "semcache/encoder.hpp"
#include "semcache/experiment.hpp"
#include "semcache/semantic_cache.hpp"

namespace semcache {

/// Raised when the embedding source cannot produce a vector for a query.
class EmbeddingSourceError : public Error {
 public:
  using Error::Error;
};

/// Raised when the LLM backend fails on a miss.
class BackendError : public Error {
 public:
  using Error::Error;
};

/// Everything `serve` needs. Config-file keys are the field names below
/// (e.g. `listen = 127.0.0.1:8080`, `threshold = 0.8`).
struct ServiceConfig {
  std::string listen = "127.0.0.1:8080";
  CacheConfig cache;
  std::optional<std::filesystem::path> checkpoint;  // absent: raw fusion
  std::string fusion = "avg";                       // used without a checkpoint

  // Embedding source: fixture lookup or an external endpoint, never both.
  std::vector<std::filesystem::path> embeddings;
  std::optional<std::filesystem::path> texts;  // id<TAB>text; default text = id
  std::optional<std::string> embedding_endpoint;

  // Backend: "mock" or an http(s) URL.
  std::string backend = "mock";
  MockBackendConfig mock;

  std::optional<std::filesystem::path> snapshot;  // loaded at start, written at shutdown

  /// Throws ValidationError unless exactly one embedding source and one
  /// backend are configured.
  void validate() const;
  /// Parses `listen` into host and port.
  std::pair<std::string, int> listen_address() const;
};

class EmbeddingSource {
 public:
  virtual ~EmbeddingSource() = default;
  /// Throws EmbeddingSourceError when the text cannot be embedded.
  virtual std::vector<float> embed(const std::string& text) = 0;
};

/// Exact match of query text against stored records.
class FixtureEmbeddingSource final : public EmbeddingSource {
 public:
  /// `texts` maps record id to query text; ids without an entry answer to
  /// their own id.
  FixtureEmbeddingSource(EmbeddingSet representation, const QueryTexts& texts);
  std::vector<float> embed(const std::string& text) override;
  std::size_t dim() const { return representation_.dim(); }

 private:
  EmbeddingSet representation_;
  std::unordered_map<std::string, std::size_t> by_text_;
};

/// POST {"text": ...} -> {"embedding": [...]}. With a checkpoint the vector
/// is treated as the concatenated base-model input and encoded.
class HttpEmbeddingSource final : public EmbeddingSource {
 public:
  HttpEmbeddingSource(std::string url, std::optional<Checkpoint> checkpoint);
  std::vector<float> embed(const std::string& text) override;

 private:
  std::string url_;
  std::optional<Checkpoint> checkpoint_;
};

/// POST {"query": ...} -> {"response": ..., optional "prompt_tokens",
/// "completion_tokens"}. Missing token counts fall back to whitespace
/// tokenization.
class HttpBackend final : public LlmBackend {
 public:
  explicit HttpBackend(std::string url);
  BackendResponse complete(const std::string& query) override;

 private:
  std::string url_;
};

/// Splits "http://host:port/path" into the scheme+authority and the path.
std::pair<std::string, std::string> split_url(const std::string& url);

struct QueryResult {
  std::string response;
  bool hit = false;
  std::optional<double> score;
};

struct ServiceStats {
  std::uint64_t total_requests = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t errors = 0;
  std::uint64_t total_tokens = 0;
  std::uint64_t tokens_served_by_cache = 0;
  double total_response_time = 0.0;
  std::size_t cache_size = 0;
  std::uint64_t evictions = 0;
};

/// Cache-fronted query handling, independent of the transport.
class CacheService {
 public:
  CacheService(std::unique_ptr<EmbeddingSource> source, std::unique_ptr<LlmBackend> backend,
               std::unique_ptr<SemanticCache> cache);

  /// Embedding failures throw EmbeddingSourceError and backend failures
  /// BackendError; neither inserts anything.
  QueryResult query(const std::string& text);
  ServiceStats stats() const;
  SemanticCache& cache() { return *cache_; }

 private:
  std::unique_ptr<EmbeddingSource> source_;
  std::unique_ptr<LlmBackend> backend_;
  std::unique_ptr<SemanticCache> cache_;
  mutable std::mutex stats_mutex_;
  ServiceStats stats_;
};

/// Builds the service described by `config` (loads fixtures, checkpoint and
/// snapshot as configured).
std::unique_ptr<CacheService> make_service(const ServiceConfig& config);

/// HTTP front end:
///   POST /query  {"query": "..."} -> {"response", "cache": "hit"|"miss", "score"}
///                plus a `Cache: hit|miss` response header
///   GET  /stats  live counters
/// Embedding failures answer 502, backend failures 502, bad requests 400.
class HttpServer {
 public:
  explicit HttpServer(CacheService& service);
  ~HttpServer();
  /// Binds; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace semcache
