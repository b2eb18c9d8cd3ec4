#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "semcache/embedding_io.hpp"
#include "semcache/encoder.hpp"
#include "semcache/experiment.hpp"
#include "semcache/metrics.hpp"

namespace semcache {

/// "avg" / "average", "concat", or "model:<name>" (one set picked by model
/// name). Throws ValidationError for anything else or an unknown model.
EmbeddingSet fused_representation(std::span<const EmbeddingSet> sets, std::string_view fusion);

/// Meta-encoder outputs for every record of the sets.
EmbeddingSet encoder_representation(const Checkpoint& checkpoint,
                                    std::span<const EmbeddingSet> sets);

/// Seeded shuffle of `pairs` truncated to round(fraction * size) (at least 1).
std::vector<LabeledPair> sample_pairs(std::span<const LabeledPair> pairs, double fraction,
                                      std::uint64_t seed);

struct EvaluationConfig {
  /// Fixed threshold; when absent it is optimized on the calibration pairs.
  std::optional<double> threshold;
  double grid_step = 0.01;
  std::optional<std::size_t> capacity;
  EvictionPolicy eviction_policy = EvictionPolicy::lru;
  ClockMode clock = ClockMode::simulated;
  MockBackendConfig backend;
  std::uint64_t seed = 0;
};

struct Evaluation {
  double threshold = 0.0;
  std::optional<double> calibration_f1;  // set when the threshold was optimized
  ClassificationReport classification;   // pair classification at `threshold`
  std::optional<MetricsReport> duplicates;     // duplicates-hit run
  std::optional<MetricsReport> nonduplicates;  // nonduplicates-miss run
  MetricsReport mixed;                         // all pairs, interleaved
};

/// Scores the pairs under one representation and replays the three cache
/// experiments against a fresh mock backend each. Runs whose mode selects no
/// pair are left empty. Throws ValidationError when neither a threshold nor
/// calibration pairs are given.
Evaluation evaluate_representation(const EmbeddingSet& representation,
                                   std::span<const LabeledPair> pairs,
                                   std::span<const LabeledPair> calibration_pairs,
                                   const EvaluationConfig& config,
                                   const QueryTexts* texts = nullptr);

}  // namespace semcache
