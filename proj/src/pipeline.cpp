#include "semcache/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "semcache/errors.hpp"

namespace semcache {

EmbeddingSet fused_representation(std::span<const EmbeddingSet> sets, std::string_view fusion) {
  if (sets.empty()) throw ValidationError("no embedding sets given");
  if (fusion == "avg" || fusion == "average") return fuse_sets(sets, Fusion::average);
  if (fusion == "concat") return fuse_sets(sets, Fusion::concat);
  if (fusion.starts_with("model:")) {
    const auto name = fusion.substr(6);
    for (const auto& s : sets) {
      if (s.model_name() == name) return s;
    }
    throw ValidationError("no embedding set named '" + std::string(name) + "'");
  }
  throw ValidationError("unknown fusion '" + std::string(fusion) +
                        "' (expected avg, concat or model:<name>)");
}

EmbeddingSet encoder_representation(const Checkpoint& checkpoint,
                                    std::span<const EmbeddingSet> sets) {
  return encode_set(checkpoint, concat_normalized_set(sets));
}

std::vector<LabeledPair> sample_pairs(std::span<const LabeledPair> pairs, double fraction,
                                      std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw ValidationError("dataset fraction must be in (0, 1]");
  }
  std::vector<LabeledPair> out(pairs.begin(), pairs.end());
  if (fraction == 1.0) return out;
  std::mt19937_64 rng(seed);
  std::shuffle(out.begin(), out.end(), rng);
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(out.size()))));
  out.resize(std::min(keep, out.size()));
  return out;
}

Evaluation evaluate_representation(const EmbeddingSet& representation,
                                   std::span<const LabeledPair> pairs,
                                   std::span<const LabeledPair> calibration_pairs,
                                   const EvaluationConfig& config, const QueryTexts* texts) {
  if (pairs.empty()) throw ValidationError("evaluation needs at least one pair");
  Evaluation ev;
  if (config.threshold) {
    ev.threshold = *config.threshold;
  } else {
    if (calibration_pairs.empty()) {
      throw ValidationError("evaluation needs a threshold or calibration pairs");
    }
    const auto choice = optimize_threshold(pair_scores(representation, calibration_pairs),
                                           pair_labels(calibration_pairs), config.grid_step);
    ev.threshold = choice.threshold;
    ev.calibration_f1 = choice.f1;
  }

  const auto scores = pair_scores(representation, pairs);
  const auto labels = pair_labels(pairs);
  std::vector<int> predictions;
  predictions.reserve(scores.size());
  for (double s : scores) predictions.push_back(s >= ev.threshold ? 1 : 0);
  ev.classification = classification_report(predictions, labels);

  ExperimentConfig xc;
  xc.cache.similarity_threshold = ev.threshold;
  xc.cache.capacity = config.capacity;
  xc.cache.eviction_policy = config.eviction_policy;
  xc.clock = config.clock;
  xc.seed = config.seed;
  auto run = [&](ExperimentMode mode) {
    xc.mode = mode;
    MockBackend backend(config.backend);
    return run_cache_experiment(representation, pairs, xc, backend, texts);
  };
  const bool has_dup = std::find(labels.begin(), labels.end(), 1) != labels.end();
  const bool has_non = std::find(labels.begin(), labels.end(), 0) != labels.end();
  if (has_dup) ev.duplicates = run(ExperimentMode::duplicates_hit);
  if (has_non) ev.nonduplicates = run(ExperimentMode::nonduplicates_miss);
  ev.mixed = run(ExperimentMode::mixed);
  return ev;
}

}  // namespace semcache
