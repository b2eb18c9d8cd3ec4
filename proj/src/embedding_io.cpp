#include "semcache/embedding_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "semcache/binary_io.hpp"
#include "semcache/errors.hpp"

namespace semcache {

namespace {

constexpr std::string_view kFixtureMagic = "SEMB";

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

EmbeddingVector::EmbeddingVector(std::vector<float> values) : values_(std::move(values)) {
  if (values_.empty()) throw ValidationError("embedding vector must have dim >= 1");
}

EmbeddingVector::EmbeddingVector(std::initializer_list<float> values)
    : EmbeddingVector(std::vector<float>(values)) {}

EmbeddingSet::EmbeddingSet(std::string model_name, std::size_t dim, std::vector<std::string> ids,
                           std::vector<float> data)
    : model_name_(std::move(model_name)), dim_(dim), ids_(std::move(ids)), data_(std::move(data)) {
  if (dim_ == 0) throw ValidationError("embedding set dim must be positive");
  if (data_.size() != ids_.size() * dim_) {
    throw ValidationError("embedding set payload has " + std::to_string(data_.size()) +
                          " floats, expected " + std::to_string(ids_.size()) + " x " +
                          std::to_string(dim_));
  }
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!index_.emplace(ids_[i], i).second) {
      throw ValidationError("duplicate record id '" + ids_[i] + "' in embedding set '" +
                            model_name_ + "'");
    }
  }
}

EmbeddingVector EmbeddingSet::vector(std::size_t i) const {
  const auto r = row(i);
  return EmbeddingVector(std::vector<float>(r.begin(), r.end()));
}

std::optional<std::size_t> EmbeddingSet::find(std::string_view id) const {
  const auto it = index_.find(std::string(id));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t EmbeddingSet::index_of(std::string_view id) const {
  if (auto i = find(id)) return *i;
  throw LookupError("unknown record id '" + std::string(id) + "' in embedding set '" +
                    model_name_ + "'");
}

EmbeddingSet EmbeddingSet::renamed(std::string model_name) const {
  EmbeddingSet copy = *this;
  copy.model_name_ = std::move(model_name);
  return copy;
}

// --- fixture format --------------------------------------------------------

EmbeddingSet read_embedding_set(std::istream& in) {
  binary::Reader r(in);
  r.expect_magic(kFixtureMagic, "embedding fixture");
  const auto version = r.read_uint<std::uint32_t>("format version");
  if (version != kFixtureVersion) {
    throw FormatError("unsupported embedding fixture version " + std::to_string(version));
  }
  const auto dim = r.read_uint<std::uint32_t>("dim");
  if (dim == 0) throw FormatError("embedding fixture declares dim 0");
  const auto count = r.read_uint<std::uint64_t>("count");
  std::string model_name = r.read_short_string("model name");

  // Every id costs at least two bytes; reject absurd counts before reserving.
  std::vector<std::string> ids;
  if (count < (1u << 24)) ids.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    ids.push_back(r.read_short_string("id table"));
  }

  std::vector<float> data;
  const std::uint64_t floats = count * dim;
  if (count != 0 && floats / count != dim) throw FormatError("count x dim overflows");
  // Check the remaining length first when the stream is seekable so a lying
  // header can't trigger a huge allocation.
  const auto here = in.tellg();
  if (here != std::streampos(-1)) {
    in.seekg(0, std::ios::end);
    const auto end = in.tellg();
    in.seekg(here);
    const auto remaining = static_cast<std::uint64_t>(end - here);
    if (remaining < floats * sizeof(float)) {
      throw CorruptionError("embedding fixture payload truncated: declared " +
                            std::to_string(count) + " rows of dim " + std::to_string(dim) +
                            ", found " + std::to_string(remaining) + " payload bytes");
    }
  }
  data.resize(floats);
  r.read_f32_span(data, "vector payload");
  return EmbeddingSet(std::move(model_name), dim, std::move(ids), std::move(data));
}

void write_embedding_set(std::ostream& out, const EmbeddingSet& set) {
  binary::write_magic(out, kFixtureMagic);
  binary::write_uint(out, kFixtureVersion);
  binary::write_uint(out, static_cast<std::uint32_t>(set.dim()));
  binary::write_uint(out, static_cast<std::uint64_t>(set.count()));
  binary::write_short_string(out, set.model_name());
  for (const auto& id : set.ids()) binary::write_short_string(out, id);
  binary::write_f32_span(out, set.data());
}

EmbeddingSet load_embedding_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open embedding fixture: " + path.string());
  try {
    return read_embedding_set(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const CorruptionError& e) {
    throw CorruptionError(path.string() + ": " + e.what());
  }
}

void save_embedding_set(const EmbeddingSet& set, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_embedding_set(out, set);
  out.flush();
  if (!out) throw IoError("short write: " + path.string());
}

// --- pairs file -------------------------------------------------------------

std::vector<LabeledPair> read_pairs(std::istream& in) {
  std::vector<LabeledPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line.front() == '#') continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos || line.find('\t', t2 + 1) != std::string::npos) {
      throw FormatError("pairs line " + std::to_string(line_no) +
                        ": expected id_a<TAB>id_b<TAB>label");
    }
    LabeledPair p{line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), 0};
    const auto label = trim(std::string_view(line).substr(t2 + 1));
    if (label == "0") {
      p.label = 0;
    } else if (label == "1") {
      p.label = 1;
    } else {
      throw FormatError("pairs line " + std::to_string(line_no) + ": label must be 0 or 1, got '" +
                        label + "'");
    }
    if (p.id_a.empty() || p.id_b.empty()) {
      throw FormatError("pairs line " + std::to_string(line_no) + ": empty id");
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

void write_pairs(std::ostream& out, std::span<const LabeledPair> pairs) {
  for (const auto& p : pairs) out << p.id_a << '\t' << p.id_b << '\t' << p.label << '\n';
}

std::vector<LabeledPair> load_pairs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pairs file: " + path.string());
  return read_pairs(in);
}

void save_pairs(std::span<const LabeledPair> pairs, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_pairs(out, pairs);
  if (!out) throw IoError("short write: " + path.string());
}

// --- vector math ------------------------------------------------------------

double l2_norm(std::span<const float> v) {
  double sum = 0.0;
  for (float x : v) sum += static_cast<double>(x) * x;
  return std::sqrt(sum);
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ValidationError("dot product of vectors with dims " + std::to_string(a.size()) +
                          " and " + std::to_string(b.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * b[i];
  return sum;
}

double cosine(std::span<const float> a, std::span<const float> b) {
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na <= kDegenerateNorm || nb <= kDegenerateNorm) {
    throw DegenerateVectorError("cosine of a near-zero vector");
  }
  return dot(a, b) / (na * nb);
}

std::vector<float> normalized(std::span<const float> v) {
  const double n = l2_norm(v);
  if (!(n > kDegenerateNorm)) {
    throw DegenerateVectorError("cannot normalize vector with L2 norm " + std::to_string(n));
  }
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
  return out;
}

EmbeddingVector normalize(const EmbeddingVector& v) {
  return EmbeddingVector(normalized(v.values()));
}

EmbeddingVector fuse_average(std::span<const EmbeddingVector> vs) {
  if (vs.empty()) throw ValidationError("fuse_average needs at least one vector");
  const std::size_t dim = vs.front().dim();
  std::vector<double> sum(dim, 0.0);
  for (const auto& v : vs) {
    if (v.dim() != dim) {
      throw ValidationError("fuse_average dimension mismatch: " + std::to_string(v.dim()) +
                            " vs " + std::to_string(dim));
    }
    for (std::size_t i = 0; i < dim; ++i) sum[i] += v[i];
  }
  std::vector<float> out(dim);
  const double n = static_cast<double>(vs.size());
  for (std::size_t i = 0; i < dim; ++i) out[i] = static_cast<float>(sum[i] / n);
  return EmbeddingVector(std::move(out));
}

EmbeddingVector fuse_concat(std::span<const EmbeddingVector> vs) {
  if (vs.empty()) throw ValidationError("fuse_concat needs at least one vector");
  std::vector<float> out;
  for (const auto& v : vs) out.insert(out.end(), v.values().begin(), v.values().end());
  return EmbeddingVector(std::move(out));
}

namespace {

void require_join_compatible(std::span<const EmbeddingSet> sets) {
  if (sets.empty()) throw ValidationError("at least one embedding set is required");
  for (std::size_t s = 1; s < sets.size(); ++s) {
    if (!sets[0].join_compatible(sets[s])) {
      throw ValidationError("embedding sets '" + sets[0].model_name() + "' and '" +
                            sets[s].model_name() + "' do not share the same id sequence");
    }
  }
}

std::string joined_name(std::span<const EmbeddingSet> sets, std::string_view prefix) {
  std::string name(prefix);
  name += '(';
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (s) name += ',';
    name += sets[s].model_name();
  }
  name += ')';
  return name;
}

std::vector<float> concat_row(std::span<const EmbeddingSet> sets, std::size_t row) {
  std::vector<float> out;
  for (const auto& set : sets) {
    const auto r = set.row(row);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

}  // namespace

EmbeddingSet fuse_sets(std::span<const EmbeddingSet> sets, Fusion fusion) {
  require_join_compatible(sets);
  const std::size_t count = sets[0].count();
  std::vector<float> data;
  std::size_t dim = 0;
  if (fusion == Fusion::concat) {
    for (const auto& s : sets) dim += s.dim();
    data.reserve(count * dim);
    for (std::size_t i = 0; i < count; ++i) {
      const auto row = concat_row(sets, i);
      data.insert(data.end(), row.begin(), row.end());
    }
  } else {
    dim = sets[0].dim();
    data.reserve(count * dim);
    std::vector<EmbeddingVector> parts(sets.size());
    for (std::size_t i = 0; i < count; ++i) {
      for (std::size_t s = 0; s < sets.size(); ++s) parts[s] = sets[s].vector(i);
      const auto avg = fuse_average(parts);
      data.insert(data.end(), avg.values().begin(), avg.values().end());
    }
  }
  return EmbeddingSet(joined_name(sets, fusion == Fusion::concat ? "concat" : "average"), dim,
                      sets[0].ids(), std::move(data));
}

EmbeddingSet concat_normalized_set(std::span<const EmbeddingSet> sets) {
  require_join_compatible(sets);
  std::size_t dim = 0;
  for (const auto& s : sets) dim += s.dim();
  std::vector<float> data;
  data.reserve(sets[0].count() * dim);
  for (std::size_t i = 0; i < sets[0].count(); ++i) {
    const auto row = normalized(concat_row(sets, i));
    data.insert(data.end(), row.begin(), row.end());
  }
  return EmbeddingSet(joined_name(sets, "input"), dim, sets[0].ids(), std::move(data));
}

std::vector<PairInput> build_pair_inputs(std::span<const EmbeddingSet> sets,
                                         std::span<const LabeledPair> pairs) {
  require_join_compatible(sets);
  auto input_for = [&](const std::string& id) {
    const std::size_t row = sets[0].index_of(id);
    return EmbeddingVector(normalized(concat_row(sets, row)));
  };
  std::vector<PairInput> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.label != 0 && p.label != 1) {
      throw ValidationError("pair label must be 0 or 1, got " + std::to_string(p.label));
    }
    out.push_back(PairInput{input_for(p.id_a), input_for(p.id_b), p.label});
  }
  return out;
}

}  // namespace semcache
