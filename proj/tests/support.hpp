#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "semcache/embedding_io.hpp"

namespace testing {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    const auto tag = std::to_string(rd()) + std::to_string(rd());
    path_ = std::filesystem::temp_directory_path() / ("semcache-test-" + tag);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

inline std::vector<float> random_vector(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(dim);
  for (auto& x : v) x = g(rng);
  return v;
}

// Set of `count` random rows with ids r0, r1, ...
inline semcache::EmbeddingSet random_set(std::mt19937_64& rng, std::size_t count, std::size_t dim,
                                         const std::string& name = "random") {
  std::vector<std::string> ids;
  std::vector<float> data;
  for (std::size_t i = 0; i < count; ++i) {
    ids.push_back("r" + std::to_string(i));
    const auto v = random_vector(rng, dim);
    data.insert(data.end(), v.begin(), v.end());
  }
  return semcache::EmbeddingSet(name, dim, std::move(ids), std::move(data));
}

// Basis vectors e_0 .. e_{count-1}: every pair of distinct records is
// orthogonal.
inline semcache::EmbeddingSet one_hot_set(std::size_t count, const std::string& prefix = "q") {
  std::vector<std::string> ids;
  std::vector<float> data(count * count, 0.0f);
  for (std::size_t i = 0; i < count; ++i) {
    ids.push_back(prefix + std::to_string(i));
    data[i * count + i] = 1.0f;
  }
  return semcache::EmbeddingSet("one-hot", count, std::move(ids), std::move(data));
}

}  // namespace testing
