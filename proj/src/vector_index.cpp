#include "semcache/vector_index.hpp"

#include <algorithm>
#include <string>

#include "semcache/errors.hpp"

namespace semcache {

void FlatIndex::check_dim(std::size_t dim, const char* what) const {
  if (dim_ != 0 && dim != dim_) {
    throw ValidationError(std::string(what) + " has dim " + std::to_string(dim) +
                          ", index dim is " + std::to_string(dim_));
  }
  if (dim == 0) throw ValidationError(std::string(what) + " is empty");
}

void FlatIndex::insert_slot(EntryId id, std::span<const float> vector) {
  auto unit = normalized(vector);  // throws DegenerateVectorError
  if (dim_ == 0) dim_ = vector.size();
  slot_of_.emplace(id, slot_ids_.size());
  slot_ids_.push_back(id);
  slot_live_.push_back(true);
  slots_.insert(slots_.end(), unit.begin(), unit.end());
}

EntryId FlatIndex::add(std::span<const float> vector) {
  check_dim(vector.size(), "vector");
  const EntryId id = next_id_;
  insert_slot(id, vector);
  ++next_id_;
  return id;
}

void FlatIndex::add_with_id(EntryId id, std::span<const float> vector) {
  check_dim(vector.size(), "vector");
  if (id < next_id_) {
    throw ValidationError("entry id " + std::to_string(id) + " is below next_id " +
                          std::to_string(next_id_));
  }
  insert_slot(id, vector);
  next_id_ = id + 1;
}

bool FlatIndex::remove(EntryId id) {
  const auto it = slot_of_.find(id);
  if (it == slot_of_.end()) return false;
  slot_live_[it->second] = false;
  slot_of_.erase(it);
  if (tombstones() * 2 > slot_ids_.size()) compact();
  return true;
}

void FlatIndex::compact() {
  std::vector<float> slots;
  std::vector<EntryId> ids;
  slots.reserve(slot_of_.size() * dim_);
  ids.reserve(slot_of_.size());
  for (std::size_t s = 0; s < slot_ids_.size(); ++s) {
    if (!slot_live_[s]) continue;
    slot_of_[slot_ids_[s]] = ids.size();
    ids.push_back(slot_ids_[s]);
    slots.insert(slots.end(), slots_.begin() + static_cast<std::ptrdiff_t>(s * dim_),
                 slots_.begin() + static_cast<std::ptrdiff_t>((s + 1) * dim_));
  }
  slots_ = std::move(slots);
  slot_ids_ = std::move(ids);
  slot_live_.assign(slot_ids_.size(), true);
}

std::vector<SearchResult> FlatIndex::search(std::span<const float> query, std::size_t k) const {
  if (k == 0) throw ValidationError("search k must be >= 1");
  if (empty()) return {};
  check_dim(query.size(), "query");
  const auto q = normalized(query);
  std::vector<SearchResult> hits;
  hits.reserve(size());
  for (std::size_t s = 0; s < slot_ids_.size(); ++s) {
    if (!slot_live_[s]) continue;
    const std::span<const float> row(slots_.data() + s * dim_, dim_);
    hits.push_back({slot_ids_[s], dot(q, row)});
  }
  const auto better = [](const SearchResult& a, const SearchResult& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.entry_id < b.entry_id;
  };
  const std::size_t keep = std::min(k, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(keep), hits.end(),
                    better);
  hits.resize(keep);
  return hits;
}

std::optional<std::span<const float>> FlatIndex::stored(EntryId id) const {
  const auto it = slot_of_.find(id);
  if (it == slot_of_.end()) return std::nullopt;
  return std::span<const float>(slots_.data() + it->second * dim_, dim_);
}

std::vector<EntryId> FlatIndex::live_ids() const {
  std::vector<EntryId> ids;
  ids.reserve(size());
  for (std::size_t s = 0; s < slot_ids_.size(); ++s) {
    if (slot_live_[s]) ids.push_back(slot_ids_[s]);
  }
  return ids;
}

}  // namespace semcache
