// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "oracles.hpp"
#include "semcache/metrics.hpp"
#include "semcache/pipeline.hpp"
#include "semcache/semantic_cache.hpp"
#include "semcache/synthetic.hpp"
#include "semcache/vector_index.hpp"
#include "support.hpp"

using namespace semcache;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// --- gradients -------------------------------------------------------------------

Outcome gradient_oracle() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;
  std::string where;
  std::size_t checked = 0;
  const int configs = 25;
  for (int i = 0; i < configs; ++i) {
    const auto cfg = oracle::random_small_config(rng);
    const auto r = oracle::gradient_check(cfg, 4 + i % 5, rng());
    checked += r.checked;
    if (r.worst_relative_error > worst) {
      worst = r.worst_relative_error;
      where = r.worst_parameter + " of config " + std::to_string(i);
    }
  }
  return {worst <= 1e-4, std::to_string(configs) + " configs, " + std::to_string(checked) +
                             " parameters, worst relative error " + fmt("%.2e", worst) +
                             (where.empty() ? "" : " at " + where)};
}

// --- index ------------------------------------------------------------------------

Outcome index_exactness() {
  std::mt19937_64 rng(99);
  std::size_t searches = 0, mismatches = 0;
  double worst = 0.0;
  const int trials = 1000;
  for (int trial = 0; trial < trials; ++trial) {
    const std::size_t dim = 2 + rng() % 15;
    FlatIndex idx;
    oracle::BruteIndex brute;
    std::vector<EntryId> live;
    for (int op = 0; op < 40; ++op) {
      const auto r = rng() % 10;
      if (r < 5 || live.empty()) {
        const auto v = testing::random_vector(rng, dim);
        const auto id = idx.add(v);
        if (id != brute.add(v)) ++mismatches;
        live.push_back(id);
      } else if (r < 7) {
        const auto at = rng() % live.size();
        if (idx.remove(live[at]) != brute.remove(live[at])) ++mismatches;
        live.erase(live.begin() + static_cast<std::ptrdiff_t>(at));
      } else {
        const auto q = testing::random_vector(rng, dim);
        const std::size_t k = 1 + rng() % 8;
        const auto got = idx.search(q, k);
        const auto want = brute.search(q, k);
        ++searches;
        if (got.size() != want.size()) {
          ++mismatches;
          continue;
        }
        for (std::size_t i = 0; i < got.size(); ++i) {
          if (got[i].entry_id != want[i].first) ++mismatches;
          worst = std::max(worst, std::abs(got[i].score - want[i].second));
        }
      }
    }
  }
  return {mismatches == 0 && worst <= 1e-6,
          std::to_string(trials) + " interleavings, " + std::to_string(searches) + " searches, " +
              std::to_string(mismatches) + " mismatches, worst score error " + fmt("%.1e", worst)};
}

// --- eviction ---------------------------------------------------------------------

Outcome eviction_oracle() {
  std::mt19937_64 rng(500);
  int differing = 0;
  std::size_t evictions = 0;
  const int strings = 500;
  for (auto policy : {EvictionPolicy::lru, EvictionPolicy::lfu}) {
    for (int s = 0; s < strings; ++s) {
      const std::size_t capacity = 1 + rng() % 20;
      const std::size_t length = 1 + rng() % 200;
      const std::size_t keys = capacity + 1 + rng() % 30;
      CacheConfig config;
      config.capacity = capacity;
      config.eviction_policy = policy;
      SemanticCache cache(config, keys);
      oracle::ReferenceCache ref(capacity, policy);
      std::map<EntryId, std::string> key_of;
      std::vector<std::string> got, want;
      for (std::size_t i = 0; i < length; ++i) {
        const auto k = rng() % keys;
        const auto key = "k" + std::to_string(k);
        std::vector<float> v(keys, 0.0f);
        v[k] = 1.0f;
        if (const auto e = ref.access(key).evicted) want.push_back(*e);
        if (!cache.lookup(v).is_hit()) {
          const auto ins = cache.insert(key, v, "r", 1, 1);
          if (ins.evicted) got.push_back(key_of.at(*ins.evicted));
          key_of[ins.entry_id] = key;
        }
      }
      evictions += want.size();
      if (got != want) ++differing;
    }
  }
  return {differing == 0, std::to_string(2 * strings) + " access strings over both policies, " +
                              std::to_string(evictions) + " evictions, " +
                              std::to_string(differing) + " differing sequences"};
}

// --- metrics ----------------------------------------------------------------------

Outcome metric_arithmetic() {
  std::mt19937_64 rng(31);
  int bad = 0;
  auto same = [](double got, long double want) {
    return std::abs(static_cast<long double>(got) - want) <=
           4 * std::numeric_limits<double>::epsilon() * std::abs(want) + 1e-300L;
  };
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t total = 1 + rng() % 1000000;
    const std::uint64_t hits = rng() % (total + 1);
    const std::uint64_t tokens = 1 + rng() % 100000000;
    const std::uint64_t served = rng() % (tokens + 1);
    const double seconds = std::uniform_real_distribution<double>(0.0, 1e4)(rng);
    if (!same(hit_ratio(hits, total), 100.0L * hits / total)) ++bad;
    if (!same(token_saving_ratio(served, tokens), 100.0L * served / tokens)) ++bad;
    if (!same(mean_response_time(seconds, total), static_cast<long double>(seconds) / total)) ++bad;
  }
  // 7,500 pairs per class: tp 6600, fn 900, tn 6225, fp 1275.
  std::vector<int> pred, label;
  auto add = [&](int n, int p, int l) {
    pred.insert(pred.end(), n, p);
    label.insert(label.end(), n, l);
  };
  add(6600, 1, 1);
  add(900, 0, 1);
  add(6225, 0, 0);
  add(1275, 1, 0);
  const auto r = classification_report(pred, label);
  auto r2 = [](double v) { return std::round(v * 100) / 100; };
  const bool example = r2(r.per_class[1].precision) == 0.84 && r2(r.per_class[1].recall) == 0.88 &&
                       r2(r.per_class[0].precision) == 0.87 &&
                       r2(r.per_class[0].recall) == 0.83 && std::abs(r.accuracy - 0.855) < 1e-12;
  return {bad == 0 && example,
          "300 ratio checks, " + std::to_string(bad) + " off; confusion example class 1 P/R " +
              fmt("%.2f", r.per_class[1].precision) + "/" + fmt("%.2f", r.per_class[1].recall) +
              ", class 0 P/R " + fmt("%.2f", r.per_class[0].precision) + "/" +
              fmt("%.2f", r.per_class[0].recall) + ", accuracy " + fmt("%.3f", r.accuracy)};
}

Outcome threshold_optimizer() {
  std::mt19937_64 rng(50);
  int bad = 0;
  const double steps[] = {0.01, 0.005, 0.02, 0.001};
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 10 + rng() % 300;
    std::vector<double> s(n);
    std::vector<int> y(n);
    std::normal_distribution<double> g(0.0, 0.3);
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = static_cast<int>(j % 2 == 0 ? 1 : rng() % 2);
      s[j] = std::clamp(g(rng) + 0.4 * y[j], -1.0, 1.0);
    }
    const double step = steps[i % 4];
    const auto got = optimize_threshold(s, y, step);
    const auto want = oracle::exhaustive_threshold(s, y, step);
    if (got.threshold != want.threshold || got.f1 != oracle::f1_of(want)) ++bad;
  }
  return {bad == 0, "50 score/label sets, " + std::to_string(bad) + " disagreements"};
}

// --- synthetic end to end -----------------------------------------------------------

Outcome synthetic_end_to_end() {
  const auto corpus = generate_synthetic(SyntheticConfig{});
  std::size_t input_dim = 0;
  for (const auto& m : corpus.models) input_dim += m.dim();
  const auto inputs = build_pair_inputs(corpus.models, corpus.pairs);
  const auto trained = train(desk_encoder_config(input_dim), desk_train_config(), inputs);

  auto pick = [&](const std::vector<std::size_t>& idx) {
    std::vector<LabeledPair> out;
    for (auto i : idx) out.push_back(corpus.pairs[i]);
    return out;
  };
  const auto val = pick(trained.split.validation);
  const auto test = pick(trained.split.test);

  EvaluationConfig config;
  auto run = [&](const EmbeddingSet& rep) {
    return evaluate_representation(rep, test, val, config, &corpus.texts);
  };
  const auto enc = run(encoder_representation(trained.best, corpus.models));
  const auto avg = run(fused_representation(corpus.models, "avg"));
  const auto cat = run(fused_representation(corpus.models, "concat"));

  const double enc_hit = *enc.duplicates->duplicate_hit_ratio;
  const double enc_miss = *enc.nonduplicates->miss_accuracy;
  const double avg_hit = *avg.duplicates->duplicate_hit_ratio;
  const double cat_hit = *cat.duplicates->duplicate_hit_ratio;
  const double enc_matched = *enc.duplicates->matched_hit_ratio;
  const bool pass = enc_hit >= 90.0 && enc_miss >= 80.0 && enc_hit > avg_hit && enc_hit > cat_hit;
  return {pass, std::to_string(corpus.pairs.size()) + " pairs, " + std::to_string(test.size()) +
                    " test; encoder t=" + fmt("%.2f", enc.threshold) + " hit " +
                    fmt("%.1f%%", enc_hit) + " (matched " + fmt("%.1f%%", enc_matched) +
                    ") miss-accuracy " + fmt("%.1f%%", enc_miss) + "; avg t=" +
                    fmt("%.2f", avg.threshold) + " hit " + fmt("%.1f%%", avg_hit) + " miss-accuracy " +
                    fmt("%.1f%%", *avg.nonduplicates->miss_accuracy) + "; concat t=" +
                    fmt("%.2f", cat.threshold) + " hit " + fmt("%.1f%%", cat_hit) +
                    " miss-accuracy " + fmt("%.1f%%", *cat.nonduplicates->miss_accuracy)};
}

// --- latency -------------------------------------------------------------------------

Outcome latency_ordering() {
  const std::size_t n = 20;
  const auto rep = testing::one_hot_set(2 * n);
  std::vector<LabeledPair> same, apart;
  for (std::size_t i = 0; i < n; ++i) {
    same.push_back({"q" + std::to_string(i), "q" + std::to_string(i), 1});
    apart.push_back({"q" + std::to_string(i), "q" + std::to_string(i + n), 0});
  }
  MockBackendConfig mock;
  mock.latency_seconds = 0.05;
  mock.sleep = true;
  ExperimentConfig config;
  config.clock = ClockMode::wall;

  MockBackend hit_backend(mock);
  config.mode = ExperimentMode::duplicates_hit;
  const auto hits = run_cache_experiment(rep, same, config, hit_backend);
  MockBackend miss_backend(mock);
  config.mode = ExperimentMode::nonduplicates_miss;
  const auto misses = run_cache_experiment(rep, apart, config, miss_backend);

  const bool pass = hits.hits == n && misses.misses == n &&
                    hits.mean_response_time <= misses.mean_response_time / 5.0;
  return {pass, "all-hit mean " + fmt("%.6f s", hits.mean_response_time) + " vs all-miss mean " +
                    fmt("%.6f s", misses.mean_response_time) + " over " + std::to_string(n) +
                    " requests each"};
}

// --- determinism ----------------------------------------------------------------------

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome determinism() {
  const std::string cli = SEMCACHE_CLI_PATH;
  testing::TempDir dir;
  auto q = [](const std::filesystem::path& p) { return "'" + p.string() + "'"; };
  if (shell("'" + cli + "' generate-synthetic --out " + q(dir / "corpus") + " >/dev/null") != 0) {
    return {false, "generate-synthetic failed"};
  }
  const std::string models = " --embeddings " + q(dir / "corpus" / "model-0.semb") + " " +
                             q(dir / "corpus" / "model-1.semb");
  for (const std::string run : {"a", "b"}) {
    const auto out = dir / run;
    std::filesystem::create_directories(out);
    const std::string train = "'" + cli + "' train" + models + " --pairs " +
                              q(dir / "corpus" / "pairs.tsv") + " --checkpoint " +
                              q(out / "enc.senc") + " --preset desk --seed 11 --split-out " +
                              q(out / "split") + " >" + q(out / "train.txt") + " 2>/dev/null";
    if (shell(train) != 0) return {false, "train run " + run + " failed"};
    const std::string eval = "'" + cli + "' evaluate" + models + " --pairs " +
                             q(out / "split" / "test.tsv") + " --calibration-pairs " +
                             q(out / "split" / "val.tsv") + " --checkpoint " + q(out / "enc.senc") +
                             " --seed 11 --records " + q(out / "records.jsonl") + " >" +
                             q(out / "evaluate.txt");
    if (shell(eval) != 0) return {false, "evaluate run " + run + " failed"};
  }
  std::vector<std::string> differing;
  for (const char* f : {"enc.senc", "enc.senc.history.tsv", "train.txt", "evaluate.txt",
                        "records.jsonl", "split/test.tsv"}) {
    const auto a = testing::read_file(dir / "a" / f);
    if (a.empty() || a != testing::read_file(dir / "b" / f)) differing.push_back(f);
  }
  std::string detail = "checkpoint " + std::to_string(testing::read_file(dir / "a" / "enc.senc").size()) +
                       " bytes; ";
  if (differing.empty()) {
    detail += "checkpoint, history, train output, evaluate report and records identical";
  } else {
    detail += "differing:";
    for (const auto& f : differing) detail += " " + f;
  }
  return {differing.empty(), detail};
}

struct Criterion {
  std::string name;
  double time_limit_seconds;  // 0: none stated
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {"gradient-oracle", 60.0, gradient_oracle},
      {"index-exactness", 30.0, index_exactness},
      {"eviction-oracle", 0.0, eviction_oracle},
      {"metric-arithmetic", 0.0, metric_arithmetic},
      {"threshold-optimizer", 0.0, threshold_optimizer},
      {"synthetic-end-to-end", 300.0, synthetic_end_to_end},
      {"latency-ordering", 0.0, latency_ordering},
      {"determinism", 0.0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string timing = fmt("%.2f s", secs);
    if (c.time_limit_seconds > 0) {
      timing += fmt(" of %.0f s allowed", c.time_limit_seconds);
      if (secs >= c.time_limit_seconds) o.pass = false;
    }
    if (!o.pass) ++failed;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << " (" << o.detail << "; " << timing
              << ")" << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed")
            << std::endl;
  return failed ? 1 : 0;
}
