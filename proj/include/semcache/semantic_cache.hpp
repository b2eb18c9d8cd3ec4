#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "semcache/vector_index.hpp"

namespace semcache {

enum class EvictionPolicy { lru, lfu };

std::string_view to_string(EvictionPolicy policy);
/// Accepts "lru"/"lfu" (any case). Throws ValidationError otherwise.
EvictionPolicy parse_eviction_policy(std::string_view text);

struct CacheConfig {
  double similarity_threshold = 0.80;
  std::optional<std::size_t> capacity;  // nullopt = unbounded
  EvictionPolicy eviction_policy = EvictionPolicy::lru;

  void validate() const;
};

struct CacheEntry {
  EntryId entry_id = 0;
  std::string query_text;
  std::string response_text;
  std::uint64_t prompt_tokens = 0;
  std::uint64_t completion_tokens = 0;
  std::uint64_t inserted_at = 0;
  std::uint64_t last_access = 0;
  std::uint64_t access_count = 0;

  std::uint64_t total_tokens() const { return prompt_tokens + completion_tokens; }
  bool operator==(const CacheEntry&) const = default;
};

struct LookupOutcome {
  enum class Kind { hit, miss };
  Kind kind = Kind::miss;
  std::optional<CacheEntry> matched_entry;  // present only on a hit
  std::optional<double> score;              // top-1 score whenever the cache is non-empty

  bool is_hit() const { return kind == Kind::hit; }
};

struct CacheStats {
  std::size_t size = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t evictions = 0;
  std::uint64_t tokens_served_by_cache = 0;
  bool operator==(const CacheStats&) const = default;
};

struct InsertResult {
  EntryId entry_id = 0;
  std::optional<EntryId> evicted;
};

/// Query/response store (Cachebase) plus flat cosine index (Vectorbase).
///
/// A lookup is a top-1 search; it is a hit when the score is >= the
/// threshold. Hits refresh recency and bump the frequency of the matched
/// entry. Insertion counts as the first access. Time is a logical counter
/// advanced by every hit and insert.
///
/// Every member takes an internal mutex, so one instance may be shared by
/// concurrent request handlers.
class SemanticCache {
 public:
  explicit SemanticCache(CacheConfig config, std::size_t dim = 0);

  SemanticCache(const SemanticCache&) = delete;
  SemanticCache& operator=(const SemanticCache&) = delete;

  /// Throws DegenerateVectorError / ValidationError from the index.
  LookupOutcome lookup(std::span<const float> embedding);

  /// Evicts one entry first if the cache is full.
  InsertResult insert(std::string query_text, std::span<const float> embedding,
                      std::string response_text, std::uint64_t prompt_tokens,
                      std::uint64_t completion_tokens);

  /// LRU: smallest last_access. LFU: smallest access_count, then smallest
  /// last_access. Throws StateError on an empty cache.
  EntryId evict_one(EvictionPolicy policy);
  EntryId evict_one() { return evict_one(config_.eviction_policy); }

  CacheStats stats() const;
  std::size_t size() const;
  const CacheConfig& config() const { return config_; }
  std::optional<CacheEntry> entry(EntryId id) const;
  std::vector<CacheEntry> entries() const;
  /// Live ids in the vector index; equals the Cachebase key set.
  std::vector<EntryId> indexed_ids() const;

  /// Single-file snapshot of entries, vectors, clock and counters.
  void save_snapshot(const std::filesystem::path& path) const;
  static std::unique_ptr<SemanticCache> load_snapshot(const std::filesystem::path& path);

 private:
  using LruKey = std::pair<std::uint64_t, EntryId>;
  using LfuKey = std::tuple<std::uint64_t, std::uint64_t, EntryId>;

  EntryId evict_locked(EvictionPolicy policy);
  void track(const CacheEntry& e);
  void untrack(const CacheEntry& e);

  CacheConfig config_;
  mutable std::mutex mutex_;
  FlatIndex index_;
  std::map<EntryId, CacheEntry> entries_;
  std::set<LruKey> by_recency_;
  std::set<LfuKey> by_frequency_;
  std::uint64_t clock_ = 0;
  CacheStats stats_;
};

}  // namespace semcache
