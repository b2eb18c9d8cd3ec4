#include "semcache/semantic_cache.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <memory>

#include "semcache/binary_io.hpp"
#include "semcache/errors.hpp"

namespace semcache {

std::string_view to_string(EvictionPolicy policy) {
  return policy == EvictionPolicy::lru ? "lru" : "lfu";
}

EvictionPolicy parse_eviction_policy(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "lru") return EvictionPolicy::lru;
  if (lower == "lfu") return EvictionPolicy::lfu;
  throw ValidationError("unknown eviction policy '" + std::string(text) + "' (expected lru|lfu)");
}

void CacheConfig::validate() const {
  if (!(similarity_threshold >= -1.0 && similarity_threshold <= 1.0)) {
    throw ValidationError("similarity threshold must be within [-1, 1]");
  }
  if (capacity && *capacity == 0) throw ValidationError("cache capacity must be positive");
}

SemanticCache::SemanticCache(CacheConfig config, std::size_t dim)
    : config_(config), index_(dim) {
  config_.validate();
}

void SemanticCache::track(const CacheEntry& e) {
  by_recency_.emplace(e.last_access, e.entry_id);
  by_frequency_.emplace(e.access_count, e.last_access, e.entry_id);
}

void SemanticCache::untrack(const CacheEntry& e) {
  by_recency_.erase({e.last_access, e.entry_id});
  by_frequency_.erase({e.access_count, e.last_access, e.entry_id});
}

LookupOutcome SemanticCache::lookup(std::span<const float> embedding) {
  std::lock_guard lock(mutex_);
  LookupOutcome out;
  if (index_.empty()) {
    // Still validate the query so a degenerate vector is reported consistently.
    (void)normalized(embedding);
    ++stats_.misses;
    return out;
  }
  const auto top = index_.search(embedding, 1);
  out.score = top.front().score;
  if (top.front().score < config_.similarity_threshold) {
    ++stats_.misses;
    return out;
  }
  auto& e = entries_.at(top.front().entry_id);
  untrack(e);
  e.last_access = ++clock_;
  ++e.access_count;
  track(e);
  ++stats_.hits;
  stats_.tokens_served_by_cache += e.total_tokens();
  out.kind = LookupOutcome::Kind::hit;
  out.matched_entry = e;
  return out;
}

InsertResult SemanticCache::insert(std::string query_text, std::span<const float> embedding,
                                   std::string response_text, std::uint64_t prompt_tokens,
                                   std::uint64_t completion_tokens) {
  std::lock_guard lock(mutex_);
  // Validate before evicting so a bad vector never costs a live entry.
  (void)normalized(embedding);
  if (index_.dim() != 0 && embedding.size() != index_.dim()) {
    throw ValidationError("embedding dim " + std::to_string(embedding.size()) +
                          " does not match cache dim " + std::to_string(index_.dim()));
  }
  InsertResult result;
  if (config_.capacity && entries_.size() >= *config_.capacity) {
    result.evicted = evict_locked(config_.eviction_policy);
  }
  const EntryId id = index_.add(embedding);
  CacheEntry e;
  e.entry_id = id;
  e.query_text = std::move(query_text);
  e.response_text = std::move(response_text);
  e.prompt_tokens = prompt_tokens;
  e.completion_tokens = completion_tokens;
  e.inserted_at = e.last_access = ++clock_;
  e.access_count = 1;
  track(e);
  entries_.emplace(id, std::move(e));
  result.entry_id = id;
  stats_.size = entries_.size();
  return result;
}

EntryId SemanticCache::evict_locked(EvictionPolicy policy) {
  if (entries_.empty()) throw StateError("cannot evict from an empty cache");
  const EntryId victim = policy == EvictionPolicy::lru ? by_recency_.begin()->second
                                                       : std::get<2>(*by_frequency_.begin());
  const auto it = entries_.find(victim);
  untrack(it->second);
  entries_.erase(it);
  index_.remove(victim);
  ++stats_.evictions;
  stats_.size = entries_.size();
  return victim;
}

EntryId SemanticCache::evict_one(EvictionPolicy policy) {
  std::lock_guard lock(mutex_);
  return evict_locked(policy);
}

CacheStats SemanticCache::stats() const {
  std::lock_guard lock(mutex_);
  return stats_;
}

std::size_t SemanticCache::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::optional<CacheEntry> SemanticCache::entry(EntryId id) const {
  std::lock_guard lock(mutex_);
  const auto it = entries_.find(id);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::vector<CacheEntry> SemanticCache::entries() const {
  std::lock_guard lock(mutex_);
  std::vector<CacheEntry> out;
  out.reserve(entries_.size());
  for (const auto& [id, e] : entries_) out.push_back(e);
  return out;
}

std::vector<EntryId> SemanticCache::indexed_ids() const {
  std::lock_guard lock(mutex_);
  auto ids = index_.live_ids();
  std::sort(ids.begin(), ids.end());
  return ids;
}

// --- snapshot -----------------------------------------------------------------
//
//   magic "SCCH" | version u32 = 1 | threshold f64 | capacity u64 (0 = unbounded)
//   | policy u8 | clock u64 | next_id u64 | hits, misses, evictions,
//   tokens_served u64 | dim u32 | count u64 |
//   count x { id u64 | query (u32 len + UTF-8) | response (u32 len + UTF-8) |
//             prompt, completion, inserted_at, last_access, access_count u64 |
//             dim x float32 (normalized) }

namespace {
constexpr std::string_view kSnapshotMagic = "SCCH";
constexpr std::uint32_t kSnapshotVersion = 1;
}  // namespace

void SemanticCache::save_snapshot(const std::filesystem::path& path) const {
  std::lock_guard lock(mutex_);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  binary::write_magic(out, kSnapshotMagic);
  binary::write_uint(out, kSnapshotVersion);
  binary::write_f64(out, config_.similarity_threshold);
  binary::write_uint(out, static_cast<std::uint64_t>(config_.capacity.value_or(0)));
  binary::write_uint(out, static_cast<std::uint8_t>(config_.eviction_policy == EvictionPolicy::lfu));
  binary::write_uint(out, clock_);
  binary::write_uint(out, index_.next_id());
  binary::write_uint(out, stats_.hits);
  binary::write_uint(out, stats_.misses);
  binary::write_uint(out, stats_.evictions);
  binary::write_uint(out, stats_.tokens_served_by_cache);
  binary::write_uint(out, static_cast<std::uint32_t>(index_.dim()));
  binary::write_uint(out, static_cast<std::uint64_t>(entries_.size()));
  for (const auto& [id, e] : entries_) {
    binary::write_uint(out, id);
    binary::write_long_string(out, e.query_text);
    binary::write_long_string(out, e.response_text);
    binary::write_uint(out, e.prompt_tokens);
    binary::write_uint(out, e.completion_tokens);
    binary::write_uint(out, e.inserted_at);
    binary::write_uint(out, e.last_access);
    binary::write_uint(out, e.access_count);
    binary::write_f32_span(out, *index_.stored(id));
  }
  out.flush();
  if (!out) throw IoError("short write: " + path.string());
}

std::unique_ptr<SemanticCache> SemanticCache::load_snapshot(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open cache snapshot: " + path.string());
  binary::Reader r(in);
  r.expect_magic(kSnapshotMagic, "cache snapshot");
  const auto version = r.read_uint<std::uint32_t>("snapshot version");
  if (version != kSnapshotVersion) {
    throw FormatError("unsupported cache snapshot version " + std::to_string(version));
  }
  CacheConfig config;
  config.similarity_threshold = r.read_f64("threshold");
  if (const auto cap = r.read_uint<std::uint64_t>("capacity"); cap != 0) config.capacity = cap;
  config.eviction_policy =
      r.read_uint<std::uint8_t>("policy") ? EvictionPolicy::lfu : EvictionPolicy::lru;
  const auto clock = r.read_uint<std::uint64_t>("clock");
  const auto next_id = r.read_uint<std::uint64_t>("next id");
  CacheStats stats;
  stats.hits = r.read_uint<std::uint64_t>("hits");
  stats.misses = r.read_uint<std::uint64_t>("misses");
  stats.evictions = r.read_uint<std::uint64_t>("evictions");
  stats.tokens_served_by_cache = r.read_uint<std::uint64_t>("tokens served");
  const auto dim = r.read_uint<std::uint32_t>("dim");
  const auto count = r.read_uint<std::uint64_t>("entry count");

  auto cache = std::make_unique<SemanticCache>(config, dim);
  std::vector<float> vec(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    CacheEntry e;
    e.entry_id = r.read_uint<std::uint64_t>("entry id");
    e.query_text = r.read_long_string("query text");
    e.response_text = r.read_long_string("response text");
    e.prompt_tokens = r.read_uint<std::uint64_t>("prompt tokens");
    e.completion_tokens = r.read_uint<std::uint64_t>("completion tokens");
    e.inserted_at = r.read_uint<std::uint64_t>("inserted_at");
    e.last_access = r.read_uint<std::uint64_t>("last_access");
    e.access_count = r.read_uint<std::uint64_t>("access_count");
    r.read_f32_span(vec, "entry vector");
    cache->index_.add_with_id(e.entry_id, vec);
    cache->track(e);
    cache->entries_.emplace(e.entry_id, std::move(e));
  }
  // Ids stay monotone across restarts even if the newest entries were evicted.
  cache->index_.advance_next_id(next_id);
  cache->clock_ = clock;
  stats.size = cache->entries_.size();
  cache->stats_ = stats;
  return cache;
}

}  // namespace semcache
