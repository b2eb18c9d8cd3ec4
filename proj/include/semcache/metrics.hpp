#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "semcache/embedding_io.hpp"

namespace semcache {

// Cache metrics. All percentages are in [0, 100]; each throws
// ValidationError when the denominator is zero or counts are inconsistent.

/// 100 * hits / total
double hit_ratio(std::uint64_t hits, std::uint64_t total);
/// 100 * tokens served from cache / total tokens processed
double token_saving_ratio(std::uint64_t tokens_served_by_cache, std::uint64_t total_tokens);
/// Seconds per request.
double mean_response_time(double total_time_seconds, std::uint64_t total_requests);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct ClassificationReport {
  std::array<ClassMetrics, 2> per_class;  // index = label
  double accuracy = 0.0;
  ClassMetrics macro_avg;
  ClassMetrics weighted_avg;
  std::size_t total = 0;
};

/// Per-class precision/recall/F1 (F1 = 0 when P + R = 0, precision = 0 when
/// nothing was predicted for the class), accuracy, macro and
/// support-weighted averages.
ClassificationReport classification_report(std::span<const int> predictions,
                                           std::span<const int> labels);

struct ThresholdChoice {
  double threshold = 0.0;
  double f1 = 0.0;
};

/// Thresholds min(scores) + j * grid_step for j = 0, 1, ... while <= max(scores).
std::vector<double> threshold_grid(std::span<const double> scores, double grid_step);

/// F1 (positive class) for predictions `score >= threshold`.
double f1_at(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Grid point with the highest positive-class F1; ties go to the larger
/// threshold. Throws ValidationError unless both labels are present.
ThresholdChoice optimize_threshold(std::span<const double> scores, std::span<const int> labels,
                                   double grid_step = 0.01);

struct ThresholdRow {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Precision/recall/F1 at every grid point (for plotting).
std::vector<ThresholdRow> threshold_sweep(std::span<const double> scores,
                                          std::span<const int> labels, double grid_step = 0.01);

/// Cosine similarity of each pair under one representation.
std::vector<double> pair_scores(const EmbeddingSet& set, std::span<const LabeledPair> pairs);
std::vector<int> pair_labels(std::span<const LabeledPair> pairs);

/// Pearson correlation; nullopt when either side has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

struct CorrelationMatrix {
  std::vector<std::string> model_names;
  std::vector<double> values;  // m x m, row-major; NaN where undefined
  std::vector<bool> zero_variance;

  std::size_t size() const { return model_names.size(); }
  double at(std::size_t i, std::size_t j) const { return values[i * size() + j]; }
};

/// Pearson correlation between the per-pair similarity-score vectors of every
/// model pair. Unit diagonal; entries against a zero-variance model are NaN.
/// Throws ValidationError for < 2 models, < 2 pairs or incompatible sets.
CorrelationMatrix correlation_study(std::span<const EmbeddingSet> sets,
                                    std::span<const LabeledPair> pairs);

/// Least-correlated model pair, ties broken by the (lexicographically
/// ordered) pair of names. Undefined entries are skipped; throws
/// ValidationError if no pair is defined.
std::pair<std::string, std::string> select_base_pair(const CorrelationMatrix& matrix);

struct HistogramBin {
  double center = 0.0;
  std::array<std::size_t, 2> counts{};  // per label
};

/// Fixed-width histogram of scores over [lo, hi], split by label.
std::vector<HistogramBin> score_histogram(std::span<const double> scores,
                                          std::span<const int> labels, std::size_t bins,
                                          double lo = -1.0, double hi = 1.0);

}  // namespace semcache
