#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "semcache/embedding_io.hpp"
#include "semcache/semantic_cache.hpp"

namespace semcache {

struct BackendResponse {
  std::string text;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
};

/// The thing a cache miss falls through to.
class LlmBackend {
 public:
  virtual ~LlmBackend() = default;
  /// Throws on failure; the caller must not cache anything in that case.
  virtual BackendResponse complete(const std::string& query) = 0;
  /// Latency charged per call when experiments run on the simulated clock.
  virtual double nominal_latency() const { return 0.0; }
};

/// Whitespace tokenization.
std::uint64_t count_tokens(std::string_view text);

struct MockBackendConfig {
  double latency_seconds = 0.005;
  std::uint64_t seed = 0;
  bool sleep = true;  // false: report latency but return immediately
  std::size_t min_completion_tokens = 20;
  std::size_t max_completion_tokens = 60;
};

/// Deterministic stand-in for an LLM: the response is a pure function of the
/// query text and seed.
class MockBackend final : public LlmBackend {
 public:
  explicit MockBackend(MockBackendConfig config = {});
  BackendResponse complete(const std::string& query) override;
  double nominal_latency() const override { return config_.latency_seconds; }
  /// The response without sleeping.
  BackendResponse generate(const std::string& query) const;
  std::uint64_t calls() const { return calls_; }
  const MockBackendConfig& config() const { return config_; }

 private:
  MockBackendConfig config_;
  std::uint64_t calls_ = 0;
};

enum class ExperimentMode { duplicates_hit, nonduplicates_miss, mixed };
enum class ClockMode { wall, simulated };

std::string_view to_string(ExperimentMode mode);
ExperimentMode parse_experiment_mode(std::string_view text);

struct ExperimentConfig {
  CacheConfig cache;
  ExperimentMode mode = ExperimentMode::mixed;
  ClockMode clock = ClockMode::wall;
  /// Per-request cost on the simulated clock; misses add the backend latency.
  double simulated_lookup_seconds = 0.001;
  std::uint64_t seed = 0;
};

struct MetricsReport {
  std::uint64_t total_requests = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  double hit_ratio = 0.0;  // 100 * hits / total_requests

  std::uint64_t duplicate_requests = 0;
  std::uint64_t duplicate_hits = 0;
  std::optional<double> duplicate_hit_ratio;
  /// Duplicate hits whose matched entry is the request's own paired
  /// question; a hit on any other entry serves an unrelated answer.
  std::uint64_t matched_hits = 0;
  std::optional<double> matched_hit_ratio;

  std::uint64_t nonduplicate_requests = 0;
  std::uint64_t correct_misses = 0;
  std::optional<double> miss_accuracy;  // correct rejections among non-duplicates

  std::uint64_t total_tokens = 0;
  std::uint64_t tokens_served_by_cache = 0;
  double token_saving_ratio = 0.0;

  double total_response_time = 0.0;
  double mean_response_time = 0.0;

  std::uint64_t evictions = 0;

  bool operator==(const MetricsReport&) const = default;
};

using QueryTexts = std::unordered_map<std::string, std::string>;

/// Populates a fresh cache with the first question of every selected pair,
/// then requests the second questions: lookup, and on a miss call the backend
/// and insert. Pair selection by mode: duplicates only, non-duplicates only,
/// or all pairs in a seeded interleaved order.
///
/// Query text is texts[id] when given, else the id itself. Throws
/// ValidationError if the mode selects no pairs.
MetricsReport run_cache_experiment(const EmbeddingSet& representation,
                                   std::span<const LabeledPair> pairs,
                                   const ExperimentConfig& config, LlmBackend& backend,
                                   const QueryTexts* texts = nullptr);

struct SweepRow {
  EvictionPolicy policy = EvictionPolicy::lru;
  double capacity_percent = 0.0;
  std::size_t capacity = 0;
  std::uint64_t requests = 0;
  std::uint64_t hits = 0;
  std::uint64_t evictions = 0;
  double hit_ratio = 0.0;
};

/// Replays `trace` (record ids) against a fresh cache per (policy, capacity).
/// Capacity is a percentage of the distinct ids in the trace (at least 1).
/// Each request is a lookup; misses insert.
std::vector<SweepRow> eviction_sweep(const EmbeddingSet& items, std::span<const std::string> trace,
                                     std::span<const double> capacity_percents,
                                     std::span<const EvictionPolicy> policies,
                                     double threshold = 0.80);

/// `length` draws from `ids` with Zipf(s) popularity; the rank order of ids is
/// a seeded shuffle.
std::vector<std::string> zipf_trace(std::span<const std::string> ids, std::size_t length,
                                    double exponent, std::uint64_t seed);

}  // namespace semcache
