#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace semcache {

/// Norms at or below this are treated as unusable embeddings.
inline constexpr double kDegenerateNorm = 1e-12;

/// Fixed-dimension float32 vector; the unit of all similarity math.
class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  /// Throws ValidationError on an empty sequence.
  explicit EmbeddingVector(std::vector<float> values);
  EmbeddingVector(std::initializer_list<float> values);

  std::size_t dim() const { return values_.size(); }
  std::span<const float> values() const { return values_; }
  float operator[](std::size_t i) const { return values_[i]; }

  bool operator==(const EmbeddingVector&) const = default;

 private:
  std::vector<float> values_;
};

struct LabeledPair {
  std::string id_a;
  std::string id_b;
  int label = 0;  // 1 = duplicate

  bool operator==(const LabeledPair&) const = default;
};

/// Embeddings for a batch of records produced by one model (or one fusion of
/// several). Immutable once constructed.
class EmbeddingSet {
 public:
  EmbeddingSet() = default;
  /// `data` is row-major count x dim. Throws ValidationError on a shape
  /// mismatch or duplicate ids.
  EmbeddingSet(std::string model_name, std::size_t dim, std::vector<std::string> ids,
               std::vector<float> data);

  const std::string& model_name() const { return model_name_; }
  std::size_t dim() const { return dim_; }
  std::size_t count() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  std::span<const float> data() const { return data_; }

  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(data_).subspan(i * dim_, dim_);
  }
  EmbeddingVector vector(std::size_t i) const;

  std::optional<std::size_t> find(std::string_view id) const;
  /// Throws LookupError for an unknown id.
  std::size_t index_of(std::string_view id) const;
  bool contains(std::string_view id) const { return find(id).has_value(); }

  /// True iff both sets carry the identical id sequence.
  bool join_compatible(const EmbeddingSet& other) const { return ids_ == other.ids_; }

  EmbeddingSet renamed(std::string model_name) const;

 private:
  std::string model_name_;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<float> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Fixture files
//
//   magic "SEMB" | version u32 = 1 | dim u32 | count u64 |
//   model_name (u16 len + UTF-8) | count x id (u16 len + UTF-8) |
//   count x dim float32, row-major
//
// All integers and floats little-endian. Loading never normalizes.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kFixtureVersion = 1;

EmbeddingSet read_embedding_set(std::istream& in);
void write_embedding_set(std::ostream& out, const EmbeddingSet& set);
EmbeddingSet load_embedding_set(const std::filesystem::path& path);
void save_embedding_set(const EmbeddingSet& set, const std::filesystem::path& path);

// Pairs file: `id_a<TAB>id_b<TAB>label` per line, '#' comments ignored.
std::vector<LabeledPair> read_pairs(std::istream& in);
void write_pairs(std::ostream& out, std::span<const LabeledPair> pairs);
std::vector<LabeledPair> load_pairs(const std::filesystem::path& path);
void save_pairs(std::span<const LabeledPair> pairs, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Vector math
// ---------------------------------------------------------------------------

double l2_norm(std::span<const float> v);
double dot(std::span<const float> a, std::span<const float> b);
/// Cosine similarity with norms recomputed; throws DegenerateVectorError if
/// either side has a near-zero norm.
double cosine(std::span<const float> a, std::span<const float> b);

/// Unit-L2 copy of `v`. Throws DegenerateVectorError when norm <= 1e-12.
EmbeddingVector normalize(const EmbeddingVector& v);
std::vector<float> normalized(std::span<const float> v);

/// Element-wise mean. Throws ValidationError on empty input or mixed dims.
EmbeddingVector fuse_average(std::span<const EmbeddingVector> vs);
/// Order-preserving concatenation. Throws ValidationError on empty input.
EmbeddingVector fuse_concat(std::span<const EmbeddingVector> vs);

enum class Fusion { average, concat };

/// Applies a fusion record-by-record across join-compatible sets. No
/// normalization is applied.
EmbeddingSet fuse_sets(std::span<const EmbeddingSet> sets, Fusion fusion);

/// Per-record concatenation across sets followed by L2 normalization; the
/// input representation for the meta-encoder.
EmbeddingSet concat_normalized_set(std::span<const EmbeddingSet> sets);

struct PairInput {
  EmbeddingVector input_a;
  EmbeddingVector input_b;
  int label = 0;
};

/// For each pair, concatenates the record's vectors across all sets (in set
/// order) and L2-normalizes the result.
/// Throws ValidationError when the sets are not join-compatible and
/// LookupError when a pair references an unknown id.
std::vector<PairInput> build_pair_inputs(std::span<const EmbeddingSet> sets,
                                         std::span<const LabeledPair> pairs);

}  // namespace semcache
