#include "semcache/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "semcache/errors.hpp"

namespace semcache {

double hit_ratio(std::uint64_t hits, std::uint64_t total) {
  if (total == 0) throw ValidationError("hit_ratio: total requests must be >= 1");
  if (hits > total) throw ValidationError("hit_ratio: hits exceed total requests");
  return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

double token_saving_ratio(std::uint64_t tokens_served_by_cache, std::uint64_t total_tokens) {
  if (total_tokens == 0) throw ValidationError("token_saving_ratio: total tokens must be >= 1");
  if (tokens_served_by_cache > total_tokens) {
    throw ValidationError("token_saving_ratio: served tokens exceed total tokens");
  }
  return 100.0 * static_cast<double>(tokens_served_by_cache) / static_cast<double>(total_tokens);
}

double mean_response_time(double total_time_seconds, std::uint64_t total_requests) {
  if (total_requests == 0) throw ValidationError("mean_response_time: no requests");
  if (total_time_seconds < 0.0) throw ValidationError("mean_response_time: negative total time");
  return total_time_seconds / static_cast<double>(total_requests);
}

ClassificationReport classification_report(std::span<const int> predictions,
                                           std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw ValidationError("classification_report: predictions and labels differ in length");
  }
  if (labels.empty()) throw ValidationError("classification_report: no samples");
  // confusion[label][prediction]
  std::array<std::array<std::size_t, 2>, 2> confusion{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if ((labels[i] != 0 && labels[i] != 1) || (predictions[i] != 0 && predictions[i] != 1)) {
      throw ValidationError("classification_report: values must be 0 or 1");
    }
    ++confusion[labels[i]][predictions[i]];
  }
  ClassificationReport r;
  r.total = labels.size();
  for (int c = 0; c < 2; ++c) {
    const int o = 1 - c;
    const double tp = static_cast<double>(confusion[c][c]);
    const double fp = static_cast<double>(confusion[o][c]);
    const double fn = static_cast<double>(confusion[c][o]);
    auto& m = r.per_class[c];
    m.support = confusion[c][0] + confusion[c][1];
    m.precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                      : 0.0;
  }
  r.accuracy = static_cast<double>(confusion[0][0] + confusion[1][1]) / static_cast<double>(r.total);
  const double n = static_cast<double>(r.total);
  const double w0 = static_cast<double>(r.per_class[0].support) / n;
  const double w1 = static_cast<double>(r.per_class[1].support) / n;
  auto combine = [&](double ClassMetrics::*field) {
    const double a = r.per_class[0].*field;
    const double b = r.per_class[1].*field;
    r.macro_avg.*field = (a + b) / 2.0;
    r.weighted_avg.*field = w0 == w1 ? (a + b) / 2.0 : w0 * a + w1 * b;
  };
  combine(&ClassMetrics::precision);
  combine(&ClassMetrics::recall);
  combine(&ClassMetrics::f1);
  r.macro_avg.support = r.weighted_avg.support = r.total;
  return r;
}

namespace {

void check_scores_labels(std::span<const double> scores, std::span<const int> labels,
                         const char* who) {
  if (scores.size() != labels.size()) {
    throw ValidationError(std::string(who) + ": scores and labels differ in length");
  }
  bool has0 = false;
  bool has1 = false;
  for (int l : labels) {
    if (l == 0) has0 = true;
    else if (l == 1) has1 = true;
    else throw ValidationError(std::string(who) + ": labels must be 0 or 1");
  }
  if (!has0 || !has1) throw ValidationError(std::string(who) + ": both labels must be present");
}

double f1_from_counts(std::size_t tp, std::size_t predicted_pos, std::size_t actual_pos) {
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(predicted_pos + actual_pos);
}

}  // namespace

std::vector<double> threshold_grid(std::span<const double> scores, double grid_step) {
  if (!(grid_step > 0.0)) throw ValidationError("threshold grid step must be positive");
  if (scores.empty()) throw ValidationError("threshold grid over an empty score set");
  const auto [lo_it, hi_it] = std::minmax_element(scores.begin(), scores.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const auto steps = static_cast<std::size_t>(std::floor((hi - lo) / grid_step + 1e-9));
  std::vector<double> grid;
  grid.reserve(steps + 1);
  for (std::size_t j = 0; j <= steps; ++j) grid.push_back(lo + static_cast<double>(j) * grid_step);
  return grid;
}

double f1_at(std::span<const double> scores, std::span<const int> labels, double threshold) {
  std::size_t tp = 0, pp = 0, ap = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    pp += pred;
    ap += labels[i] == 1;
    tp += pred && labels[i] == 1;
  }
  return f1_from_counts(tp, pp, ap);
}

std::vector<ThresholdRow> threshold_sweep(std::span<const double> scores,
                                          std::span<const int> labels, double grid_step) {
  check_scores_labels(scores, labels, "threshold_sweep");
  const auto grid = threshold_grid(scores, grid_step);
  // Sort descending so "score >= t" is a prefix that grows as t falls.
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  const auto actual_pos =
      static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  std::vector<ThresholdRow> rows(grid.size());
  std::size_t taken = 0;
  std::size_t tp = 0;
  for (std::size_t g = grid.size(); g-- > 0;) {
    const double t = grid[g];
    while (taken < order.size() && scores[order[taken]] >= t) {
      tp += labels[order[taken]] == 1;
      ++taken;
    }
    ThresholdRow& row = rows[g];
    row.threshold = t;
    row.precision = taken ? static_cast<double>(tp) / static_cast<double>(taken) : 0.0;
    row.recall = static_cast<double>(tp) / static_cast<double>(actual_pos);
    row.f1 = f1_from_counts(tp, taken, actual_pos);
  }
  return rows;
}

ThresholdChoice optimize_threshold(std::span<const double> scores, std::span<const int> labels,
                                   double grid_step) {
  check_scores_labels(scores, labels, "optimize_threshold");
  const auto rows = threshold_sweep(scores, labels, grid_step);
  ThresholdChoice best{rows.front().threshold, -1.0};
  for (const auto& row : rows) {
    if (row.f1 >= best.f1) best = {row.threshold, row.f1};  // later = larger t wins ties
  }
  return best;
}

std::vector<double> pair_scores(const EmbeddingSet& set, std::span<const LabeledPair> pairs) {
  std::vector<double> scores;
  scores.reserve(pairs.size());
  for (const auto& p : pairs) {
    scores.push_back(cosine(set.row(set.index_of(p.id_a)), set.row(set.index_of(p.id_b))));
  }
  return scores;
}

std::vector<int> pair_labels(std::span<const LabeledPair> pairs) {
  std::vector<int> labels;
  labels.reserve(pairs.size());
  for (const auto& p : pairs) labels.push_back(p.label);
  return labels;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw ValidationError("pearson needs two equal-length series of >= 2 values");
  }
  // A constant series has no variance; testing it directly avoids a tiny
  // nonzero sxx from rounding in the mean.
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y)) return std::nullopt;
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

CorrelationMatrix correlation_study(std::span<const EmbeddingSet> sets,
                                    std::span<const LabeledPair> pairs) {
  if (sets.size() < 2) throw ValidationError("correlation_study needs at least 2 models");
  if (pairs.size() < 2) throw ValidationError("correlation_study needs at least 2 pairs");
  for (std::size_t s = 1; s < sets.size(); ++s) {
    if (!sets[0].join_compatible(sets[s])) {
      throw ValidationError("correlation_study: sets '" + sets[0].model_name() + "' and '" +
                            sets[s].model_name() + "' are not join-compatible");
    }
  }
  const std::size_t m = sets.size();
  std::vector<std::vector<double>> scores;
  CorrelationMatrix out;
  for (const auto& s : sets) {
    scores.push_back(pair_scores(s, pairs));
    out.model_names.push_back(s.model_name());
  }
  out.values.assign(m * m, std::numeric_limits<double>::quiet_NaN());
  out.zero_variance.assign(m, false);
  for (std::size_t i = 0; i < m; ++i) {
    out.values[i * m + i] = 1.0;
    for (std::size_t j = i + 1; j < m; ++j) {
      const auto r = pearson(scores[i], scores[j]);
      if (r) {
        out.values[i * m + j] = out.values[j * m + i] = *r;
      }
    }
    // zero variance shows up as undefined against every other model
    const auto self = pearson(scores[i], scores[i]);
    out.zero_variance[i] = !self.has_value();
  }
  return out;
}

std::pair<std::string, std::string> select_base_pair(const CorrelationMatrix& matrix) {
  const std::size_t m = matrix.size();
  if (m < 2) throw ValidationError("select_base_pair needs at least 2 models");
  std::optional<std::pair<std::string, std::string>> best;
  double best_value = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const double v = matrix.at(i, j);
      if (std::isnan(v)) continue;
      auto names = std::minmax(matrix.model_names[i], matrix.model_names[j]);
      std::pair<std::string, std::string> candidate{names.first, names.second};
      if (!best || v < best_value || (v == best_value && candidate < *best)) {
        best = candidate;
        best_value = v;
      }
    }
  }
  if (!best) throw ValidationError("select_base_pair: no defined correlations");
  return *best;
}

std::vector<HistogramBin> score_histogram(std::span<const double> scores,
                                          std::span<const int> labels, std::size_t bins,
                                          double lo, double hi) {
  if (bins == 0 || !(hi > lo)) throw ValidationError("score_histogram: bad bin specification");
  if (scores.size() != labels.size()) throw ValidationError("score_histogram: length mismatch");
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<HistogramBin> out(bins);
  for (std::size_t b = 0; b < bins; ++b) out[b].center = lo + (static_cast<double>(b) + 0.5) * width;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto b = static_cast<std::ptrdiff_t>(std::floor((scores[i] - lo) / width));
    b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
    ++out[static_cast<std::size_t>(b)].counts[labels[i] == 1 ? 1 : 0];
  }
  return out;
}

}  // namespace semcache
