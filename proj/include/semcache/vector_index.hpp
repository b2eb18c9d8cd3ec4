#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "semcache/embedding_io.hpp"

namespace semcache {

using EntryId = std::uint64_t;

struct SearchResult {
  EntryId entry_id = 0;
  double score = 0.0;  // cosine similarity
  bool operator==(const SearchResult&) const = default;
};

/// Exact (brute-force) cosine index. Vectors are normalized on insertion so
/// a search is a dot-product scan over every live entry.
///
/// Results are ordered by descending score, ties by ascending entry id.
/// Removed slots are tombstoned and compacted once tombstones exceed half of
/// the slots; entry ids are never reused.
///
/// Thread safety: const members may run concurrently; add/remove need
/// external serialization against everything else.
class FlatIndex {
 public:
  /// dim 0 means "fixed by the first add".
  explicit FlatIndex(std::size_t dim = 0) : dim_(dim) {}

  /// Throws ValidationError on a dim mismatch, DegenerateVectorError on a
  /// near-zero vector.
  EntryId add(std::span<const float> vector);
  EntryId add(const EmbeddingVector& vector) { return add(vector.values()); }

  /// Inserts under a caller-chosen id (snapshot restore). The id must be
  /// >= next_id(); throws ValidationError otherwise.
  void add_with_id(EntryId id, std::span<const float> vector);

  /// Raises next_id() to at least `next` (never lowers it).
  void advance_next_id(EntryId next) { next_id_ = std::max(next_id_, next); }

  bool remove(EntryId id);

  /// Top-k by cosine. Empty index yields an empty result. Throws
  /// ValidationError for k == 0 or a dim mismatch, DegenerateVectorError for
  /// a near-zero query.
  std::vector<SearchResult> search(std::span<const float> query, std::size_t k) const;
  std::vector<SearchResult> search(const EmbeddingVector& query, std::size_t k) const {
    return search(query.values(), k);
  }

  bool contains(EntryId id) const { return slot_of_.contains(id); }
  /// Stored (normalized) vector, if live.
  std::optional<std::span<const float>> stored(EntryId id) const;
  std::vector<EntryId> live_ids() const;

  std::size_t size() const { return slot_of_.size(); }
  bool empty() const { return slot_of_.empty(); }
  std::size_t dim() const { return dim_; }
  EntryId next_id() const { return next_id_; }
  std::size_t slot_count() const { return slot_ids_.size(); }
  std::size_t tombstones() const { return slot_ids_.size() - slot_of_.size(); }

 private:
  void check_dim(std::size_t dim, const char* what) const;
  void insert_slot(EntryId id, std::span<const float> vector);
  void compact();

  std::size_t dim_ = 0;
  EntryId next_id_ = 0;
  std::vector<float> slots_;           // slot_count x dim, normalized
  std::vector<EntryId> slot_ids_;
  std::vector<bool> slot_live_;
  std::unordered_map<EntryId, std::size_t> slot_of_;
};

}  // namespace semcache
