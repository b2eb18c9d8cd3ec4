#include "semcache/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <thread>
#include <unordered_set>

#include "semcache/errors.hpp"
#include "semcache/metrics.hpp"

namespace semcache {

std::uint64_t count_tokens(std::string_view text) {
  std::uint64_t tokens = 0;
  bool in_token = false;
  for (char c : text) {
    const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    if (!space && !in_token) ++tokens;
    in_token = !space;
  }
  return tokens;
}

// --- mock backend -------------------------------------------------------------

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t splitmix(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

constexpr std::string_view kVocabulary[] = {
    "the",    "answer", "depends", "on",      "context", "generally", "you",   "should",
    "consider", "this", "approach", "because", "it",     "works",     "well",  "in",
    "most",   "cases",  "however", "some",    "details", "matter",    "more",  "than",
    "others", "so",     "check",   "results", "carefully", "and",     "adjust", "as",
    "needed"};

}  // namespace

MockBackend::MockBackend(MockBackendConfig config) : config_(config) {
  if (config_.latency_seconds < 0.0) throw ValidationError("mock latency must be >= 0");
  if (config_.min_completion_tokens == 0 ||
      config_.max_completion_tokens < config_.min_completion_tokens) {
    throw ValidationError("mock completion token range is invalid");
  }
}

BackendResponse MockBackend::generate(const std::string& query) const {
  std::uint64_t state = fnv1a(query) ^ (config_.seed * 0xD6E8FEB86659FD93ull);
  const std::size_t span = config_.max_completion_tokens - config_.min_completion_tokens + 1;
  const std::size_t words = config_.min_completion_tokens + splitmix(state) % span;
  BackendResponse r;
  r.text.reserve(words * 8);
  for (std::size_t w = 0; w < words; ++w) {
    if (w) r.text += ' ';
    r.text += kVocabulary[splitmix(state) % std::size(kVocabulary)];
  }
  r.prompt_tokens = count_tokens(query);
  r.completion_tokens = words;
  return r;
}

BackendResponse MockBackend::complete(const std::string& query) {
  ++calls_;
  if (config_.sleep && config_.latency_seconds > 0.0) {
    std::this_thread::sleep_for(std::chrono::duration<double>(config_.latency_seconds));
  }
  return generate(query);
}

// --- experiments --------------------------------------------------------------

std::string_view to_string(ExperimentMode mode) {
  switch (mode) {
    case ExperimentMode::duplicates_hit: return "duplicates-hit";
    case ExperimentMode::nonduplicates_miss: return "nonduplicates-miss";
    case ExperimentMode::mixed: return "mixed";
  }
  return "mixed";
}

ExperimentMode parse_experiment_mode(std::string_view text) {
  if (text == "duplicates-hit") return ExperimentMode::duplicates_hit;
  if (text == "nonduplicates-miss") return ExperimentMode::nonduplicates_miss;
  if (text == "mixed") return ExperimentMode::mixed;
  throw ValidationError("unknown experiment mode '" + std::string(text) + "'");
}

MetricsReport run_cache_experiment(const EmbeddingSet& representation,
                                   std::span<const LabeledPair> pairs,
                                   const ExperimentConfig& config, LlmBackend& backend,
                                   const QueryTexts* texts) {
  std::vector<LabeledPair> selected;
  for (const auto& p : pairs) {
    const bool keep = config.mode == ExperimentMode::mixed ||
                      (config.mode == ExperimentMode::duplicates_hit && p.label == 1) ||
                      (config.mode == ExperimentMode::nonduplicates_miss && p.label == 0);
    if (keep) selected.push_back(p);
  }
  if (selected.empty()) {
    throw ValidationError(std::string("cache experiment '") + std::string(to_string(config.mode)) +
                          "' has an empty trace");
  }
  if (config.mode == ExperimentMode::mixed) {
    std::mt19937_64 rng(config.seed);
    std::shuffle(selected.begin(), selected.end(), rng);
  }
  auto text_of = [&](const std::string& id) -> std::string {
    if (texts) {
      if (auto it = texts->find(id); it != texts->end()) return it->second;
    }
    return id;
  };

  SemanticCache cache(config.cache, representation.dim());
  std::unordered_map<EntryId, std::string> entry_record;
  std::unordered_set<std::string> populated;
  for (const auto& p : selected) {
    if (!populated.insert(p.id_a).second) continue;
    const auto text = text_of(p.id_a);
    const auto resp = backend.complete(text);
    const auto ins = cache.insert(text, representation.row(representation.index_of(p.id_a)),
                                  resp.text, resp.prompt_tokens, resp.completion_tokens);
    entry_record[ins.entry_id] = p.id_a;
  }
  const auto evictions_before = cache.stats().evictions;

  MetricsReport rep;
  using clock = std::chrono::steady_clock;
  for (const auto& p : selected) {
    const auto text = text_of(p.id_b);
    const auto embedding = representation.row(representation.index_of(p.id_b));
    const auto start = clock::now();
    const auto outcome = cache.lookup(embedding);
    if (outcome.is_hit()) {
      rep.total_tokens += outcome.matched_entry->total_tokens();
      rep.tokens_served_by_cache += outcome.matched_entry->total_tokens();
    } else {
      const auto resp = backend.complete(text);
      const auto ins =
          cache.insert(text, embedding, resp.text, resp.prompt_tokens, resp.completion_tokens);
      entry_record[ins.entry_id] = p.id_b;
      rep.total_tokens += resp.prompt_tokens + resp.completion_tokens;
    }
    const auto stop = clock::now();
    if (config.clock == ClockMode::wall) {
      rep.total_response_time += std::chrono::duration<double>(stop - start).count();
    } else {
      rep.total_response_time +=
          config.simulated_lookup_seconds + (outcome.is_hit() ? 0.0 : backend.nominal_latency());
    }

    ++rep.total_requests;
    if (outcome.is_hit()) ++rep.hits; else ++rep.misses;
    if (p.label == 1) {
      ++rep.duplicate_requests;
      rep.duplicate_hits += outcome.is_hit();
      if (outcome.is_hit()) {
        const auto it = entry_record.find(outcome.matched_entry->entry_id);
        rep.matched_hits += it != entry_record.end() && it->second == p.id_a;
      }
    } else {
      ++rep.nonduplicate_requests;
      rep.correct_misses += !outcome.is_hit();
    }
  }
  rep.hit_ratio = hit_ratio(rep.hits, rep.total_requests);
  if (rep.duplicate_requests) {
    rep.duplicate_hit_ratio = hit_ratio(rep.duplicate_hits, rep.duplicate_requests);
    rep.matched_hit_ratio = hit_ratio(rep.matched_hits, rep.duplicate_requests);
  }
  if (rep.nonduplicate_requests) {
    rep.miss_accuracy = hit_ratio(rep.correct_misses, rep.nonduplicate_requests);
  }
  rep.token_saving_ratio =
      rep.total_tokens ? token_saving_ratio(rep.tokens_served_by_cache, rep.total_tokens) : 0.0;
  rep.mean_response_time = mean_response_time(rep.total_response_time, rep.total_requests);
  rep.evictions = cache.stats().evictions - evictions_before;
  return rep;
}

// --- eviction sweep -----------------------------------------------------------

std::vector<SweepRow> eviction_sweep(const EmbeddingSet& items, std::span<const std::string> trace,
                                     std::span<const double> capacity_percents,
                                     std::span<const EvictionPolicy> policies, double threshold) {
  if (trace.empty()) throw ValidationError("eviction_sweep: empty trace");
  std::unordered_set<std::string> distinct(trace.begin(), trace.end());
  std::vector<std::size_t> rows;
  rows.reserve(trace.size());
  for (const auto& id : trace) rows.push_back(items.index_of(id));

  std::vector<SweepRow> out;
  for (const auto policy : policies) {
    for (const double pct : capacity_percents) {
      if (!(pct > 0.0)) throw ValidationError("eviction_sweep: capacity percent must be positive");
      CacheConfig cfg;
      cfg.similarity_threshold = threshold;
      cfg.eviction_policy = policy;
      cfg.capacity = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(pct / 100.0 * static_cast<double>(distinct.size()))));
      SemanticCache cache(cfg, items.dim());
      for (std::size_t i = 0; i < trace.size(); ++i) {
        const auto emb = items.row(rows[i]);
        if (!cache.lookup(emb).is_hit()) cache.insert(trace[i], emb, {}, 0, 0);
      }
      const auto stats = cache.stats();
      SweepRow row;
      row.policy = policy;
      row.capacity_percent = pct;
      row.capacity = *cfg.capacity;
      row.requests = trace.size();
      row.hits = stats.hits;
      row.evictions = stats.evictions;
      row.hit_ratio = hit_ratio(stats.hits, trace.size());
      out.push_back(row);
    }
  }
  return out;
}

std::vector<std::string> zipf_trace(std::span<const std::string> ids, std::size_t length,
                                    double exponent, std::uint64_t seed) {
  if (ids.empty()) throw ValidationError("zipf_trace: no ids");
  std::mt19937_64 rng(seed);
  std::vector<std::string> ranked(ids.begin(), ids.end());
  std::shuffle(ranked.begin(), ranked.end(), rng);
  std::vector<double> weights(ranked.size());
  for (std::size_t k = 0; k < weights.size(); ++k) {
    weights[k] = 1.0 / std::pow(static_cast<double>(k + 1), exponent);
  }
  std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
  std::vector<std::string> trace;
  trace.reserve(length);
  for (std::size_t i = 0; i < length; ++i) trace.push_back(ranked[dist(rng)]);
  return trace;
}

}  // namespace semcache
