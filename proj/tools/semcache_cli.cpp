// semcache: command-line front end for training, evaluation and serving.
//
// Exit status: 0 success, 2 usage error (bad flags, missing input files,
// out-of-range values), 1 runtime error.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <pthread.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "semcache/config_file.hpp"
#include "semcache/encoder.hpp"
#include "semcache/errors.hpp"
#include "semcache/experiment.hpp"
#include "semcache/metrics.hpp"
#include "semcache/pipeline.hpp"
#include "semcache/report.hpp"
#include "semcache/service.hpp"
#include "semcache/synthetic.hpp"

namespace fs = std::filesystem;
using namespace semcache;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 1;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw UsageError("file not found: " + path);
}

std::vector<EmbeddingSet> load_sets(const std::vector<std::string>& paths) {
  if (paths.empty()) throw UsageError("at least one --embeddings file is required");
  for (const auto& p : paths) require_file(p);
  std::vector<EmbeddingSet> sets;
  for (const auto& p : paths) sets.push_back(load_embedding_set(p));
  return sets;
}

std::vector<LabeledPair> load_pairs_checked(const std::string& path) {
  require_file(path);
  return load_pairs(path);
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << content;
  if (!out) throw IoError("failed writing " + path);
}

// Representation chosen by --checkpoint or --fusion.
struct RepresentationArgs {
  std::string checkpoint;
  std::string fusion;

  void add(CLI::App* cmd, const char* default_fusion) {
    fusion = default_fusion;
    auto* c = cmd->add_option("--checkpoint", checkpoint, "encoder checkpoint");
    auto* f = cmd->add_option("--fusion", fusion, "avg | concat | model:<name>");
    c->excludes(f);
  }
  EmbeddingSet build(const std::vector<EmbeddingSet>& sets, std::string* label) const {
    if (!checkpoint.empty()) {
      require_file(checkpoint);
      if (label) *label = "encoder";
      return encoder_representation(load_checkpoint(checkpoint), sets);
    }
    if (fusion.empty()) throw UsageError("one of --checkpoint or --fusion is required");
    if (label) *label = fusion;
    try {
      return fused_representation(sets, fusion);
    } catch (const ValidationError& e) {
      throw UsageError(e.what());
    }
  }
};

// --- generate-synthetic -------------------------------------------------------

struct SyntheticArgs {
  std::string out;
  SyntheticConfig config;
};

int run_generate(const SyntheticArgs& a) {
  const auto corpus = generate_synthetic(a.config);
  write_synthetic(corpus, a.out);
  std::cout << "wrote " << corpus.pairs.size() << " pairs, " << corpus.models.size()
            << " models to " << a.out << '\n';
  return 0;
}

// --- train --------------------------------------------------------------------

struct TrainArgs {
  std::vector<std::string> embeddings;
  std::string pairs;
  std::string checkpoint;
  std::string history;
  std::string split_out;
  std::string preset = "default";
  EncoderConfig encoder;
  TrainConfig train;
  std::uint64_t seed = 0;
  CLI::App* cmd = nullptr;
};

int run_train(TrainArgs& a) {
  const auto sets = load_sets(a.embeddings);
  const auto pairs = load_pairs_checked(a.pairs);
  std::size_t input_dim = 0;
  for (const auto& s : sets) input_dim += s.dim();

  EncoderConfig ec;
  TrainConfig tc;
  if (a.preset == "desk") {
    ec = desk_encoder_config(input_dim, a.seed);
    tc = desk_train_config(a.seed);
  } else if (a.preset != "default") {
    throw UsageError("--preset must be default or desk");
  }
  ec.input_dim = input_dim;
  ec.seed = a.seed;
  tc.seed = a.seed;
  auto given = [&](const char* name) { return a.cmd->count(name) > 0; };
  if (given("--hidden-dim")) ec.hidden_dim = a.encoder.hidden_dim;
  if (given("--reduced-dim")) ec.reduced_dim = a.encoder.reduced_dim;
  if (given("--output-dim")) ec.output_dim = a.encoder.output_dim;
  if (given("--dropout")) ec.dropout_rate = a.encoder.dropout_rate;
  if (given("--leaky-slope")) ec.leaky_slope = a.encoder.leaky_slope;
  if (given("--bn-eps")) ec.bn_eps = a.encoder.bn_eps;
  if (given("--bn-momentum")) ec.bn_momentum = a.encoder.bn_momentum;
  if (given("--margin")) ec.margin = a.encoder.margin;
  if (given("--learning-rate")) tc.learning_rate = a.train.learning_rate;
  if (given("--weight-decay")) tc.weight_decay = a.train.weight_decay;
  if (given("--scheduler-step")) tc.scheduler_step = a.train.scheduler_step;
  if (given("--scheduler-gamma")) tc.scheduler_gamma = a.train.scheduler_gamma;
  if (given("--patience")) tc.early_stop_patience = a.train.early_stop_patience;
  if (given("--max-epochs")) tc.max_epochs = a.train.max_epochs;
  if (given("--batch-size")) tc.batch_size = a.train.batch_size;
  try {
    ec.validate();
    tc.validate();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }

  const auto inputs = build_pair_inputs(sets, pairs);
  const auto result = train(ec, tc, inputs, [](const EpochRecord& r) {
    std::fprintf(stderr, "epoch %d  train_loss %.6f  val_loss %.6f  lr %.3g\n", r.epoch,
                 r.train_loss, r.val_loss, r.learning_rate);
  });
  save_checkpoint(result.best, a.checkpoint);
  const std::string history = a.history.empty() ? a.checkpoint + ".history.tsv" : a.history;
  {
    std::ofstream out(history, std::ios::binary);
    if (!out) throw IoError("cannot write " + history);
    write_history(out, result.history);
  }
  if (!a.split_out.empty()) {
    fs::create_directories(a.split_out);
    auto dump = [&](const std::vector<std::size_t>& idx, const char* name) {
      std::vector<LabeledPair> part;
      for (auto i : idx) part.push_back(pairs[i]);
      save_pairs(part, fs::path(a.split_out) / name);
    };
    dump(result.split.train, "train.tsv");
    dump(result.split.validation, "val.tsv");
    dump(result.split.test, "test.tsv");
  }
  std::printf("best_epoch %d\nvalidation_loss %.9g\nepochs_run %zu%s\n", result.best.epoch,
              result.best.validation_loss, result.history.size(),
              result.stopped_early ? " (early stop)" : "");
  return 0;
}

// --- evaluate -----------------------------------------------------------------

struct EvaluateArgs {
  std::vector<std::string> embeddings;
  std::string pairs;
  std::string calibration_pairs;
  std::string texts;
  RepresentationArgs rep;
  std::optional<double> threshold;
  double dataset_fraction = 1.0;
  double grid_step = 0.01;
  std::optional<std::size_t> capacity;
  std::string policy = "lru";
  double latency = 0.005;
  std::uint64_t mock_seed = 0;
  std::string clock = "simulated";
  std::uint64_t seed = 0;
  std::string records;
  std::string histogram;
  std::size_t bins = 40;
};

int run_evaluate(const EvaluateArgs& a) {
  if (a.threshold && !(*a.threshold >= -1.0 && *a.threshold <= 1.0)) {
    throw UsageError("--threshold must lie in [-1, 1] (cosine range)");
  }
  static const double kFractions[] = {0.2, 0.4, 0.6, 0.8, 1.0};
  bool fraction_ok = false;
  for (double f : kFractions) fraction_ok |= std::abs(f - a.dataset_fraction) < 1e-12;
  if (!fraction_ok) throw UsageError("--dataset-fraction must be one of 0.2, 0.4, 0.6, 0.8, 1.0");
  if (a.clock != "wall" && a.clock != "simulated") {
    throw UsageError("--clock must be wall or simulated");
  }
  EvictionPolicy policy;
  try {
    policy = parse_eviction_policy(a.policy);
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }

  const auto sets = load_sets(a.embeddings);
  const auto all_pairs = load_pairs_checked(a.pairs);
  std::vector<LabeledPair> calibration;
  if (!a.calibration_pairs.empty()) calibration = load_pairs_checked(a.calibration_pairs);
  QueryTexts texts;
  if (!a.texts.empty()) {
    require_file(a.texts);
    texts = load_texts(a.texts);
  }
  std::string label;
  const auto rep = a.rep.build(sets, &label);
  const auto pairs = sample_pairs(all_pairs, a.dataset_fraction, a.seed);

  EvaluationConfig cfg;
  cfg.threshold = a.threshold;
  if (!cfg.threshold && calibration.empty()) cfg.threshold = 0.80;
  cfg.grid_step = a.grid_step;
  cfg.capacity = a.capacity;
  cfg.eviction_policy = policy;
  cfg.clock = a.clock == "wall" ? ClockMode::wall : ClockMode::simulated;
  cfg.backend.latency_seconds = a.latency;
  cfg.backend.seed = a.mock_seed;
  cfg.backend.sleep = cfg.clock == ClockMode::wall;
  cfg.seed = a.seed;
  const auto ev = evaluate_representation(rep, pairs, calibration, cfg,
                                          texts.empty() ? nullptr : &texts);

  std::ostringstream canon;
  canon << "evaluate;representation=" << label << ";threshold="
        << (a.threshold ? fmt_double(*a.threshold) : std::string("optimized"))
        << ";fraction=" << fmt_double(a.dataset_fraction) << ";grid=" << fmt_double(a.grid_step)
        << ";capacity=" << (a.capacity ? std::to_string(*a.capacity) : "none")
        << ";policy=" << a.policy << ";latency=" << fmt_double(a.latency)
        << ";mock_seed=" << a.mock_seed << ";clock=" << a.clock;
  const auto hash = config_hash(canon.str());

  std::ostringstream out;
  out << "representation " << label << "\nthreshold " << ev.threshold;
  if (ev.calibration_f1) out << " (validation F1 " << *ev.calibration_f1 << ")";
  out << "\npairs " << pairs.size() << "\nconfig_hash " << hash << "\n\n";
  out << "## classification\n";
  write_classification_table(out, ev.classification);
  if (ev.duplicates) {
    out << "\n## duplicates-hit\n";
    write_metrics_table(out, *ev.duplicates);
  }
  if (ev.nonduplicates) {
    out << "\n## nonduplicates-miss\n";
    write_metrics_table(out, *ev.nonduplicates);
  }
  out << "\n## mixed\n";
  write_metrics_table(out, ev.mixed);
  std::cout << out.str();

  if (!a.records.empty()) {
    std::vector<Record> recs{{"threshold", ev.threshold}};
    if (ev.calibration_f1) recs.push_back({"calibration_f1", *ev.calibration_f1});
    auto add = [&](std::vector<Record> more) { recs.insert(recs.end(), more.begin(), more.end()); };
    add(to_records(ev.classification, "classification."));
    if (ev.duplicates) add(to_records(*ev.duplicates, "duplicates."));
    if (ev.nonduplicates) add(to_records(*ev.nonduplicates, "nonduplicates."));
    add(to_records(ev.mixed, "mixed."));
    std::ostringstream r;
    write_records(r, recs, hash, a.seed);
    write_file(a.records, r.str());
  }
  if (!a.histogram.empty()) {
    std::ostringstream h;
    write_histogram(h, score_histogram(pair_scores(rep, pairs), pair_labels(pairs), a.bins));
    write_file(a.histogram, h.str());
  }
  return 0;
}

// --- correlate ----------------------------------------------------------------

struct CorrelateArgs {
  std::vector<std::string> embeddings;
  std::string pairs;
  std::string records;
};

int run_correlate(const CorrelateArgs& a) {
  const auto sets = load_sets(a.embeddings);
  if (sets.size() < 2) throw UsageError("correlate needs at least two --embeddings files");
  const auto pairs = load_pairs_checked(a.pairs);
  const auto m = correlation_study(sets, pairs);
  write_correlation_table(std::cout, m);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m.zero_variance[i]) std::cout << "# zero-variance scores: " << m.model_names[i] << '\n';
  }
  const auto [x, y] = select_base_pair(m);
  std::cout << "least correlated pair: " << x << " " << y << '\n';
  if (!a.records.empty()) {
    std::vector<Record> recs;
    for (std::size_t i = 0; i < m.size(); ++i) {
      for (std::size_t j = i + 1; j < m.size(); ++j) {
        recs.push_back({"correlation." + m.model_names[i] + "." + m.model_names[j], m.at(i, j)});
      }
    }
    std::ostringstream r;
    write_records(r, recs, config_hash("correlate"), 0);
    write_file(a.records, r.str());
  }
  return 0;
}

// --- threshold-sweep ------------------------------------------------------------

struct SweepArgs {
  std::vector<std::string> embeddings;
  std::string pairs;
  RepresentationArgs rep;
  double grid_step = 0.01;
  std::string output;
  std::string histogram;
  std::size_t bins = 40;
};

int run_threshold_sweep(const SweepArgs& a) {
  if (!(a.grid_step > 0.0)) throw UsageError("--grid-step must be positive");
  const auto sets = load_sets(a.embeddings);
  const auto pairs = load_pairs_checked(a.pairs);
  const auto rep = a.rep.build(sets, nullptr);
  const auto scores = pair_scores(rep, pairs);
  const auto labels = pair_labels(pairs);
  const auto rows = threshold_sweep(scores, labels, a.grid_step);
  const auto best = optimize_threshold(scores, labels, a.grid_step);
  if (!a.output.empty()) {
    std::ostringstream t;
    write_threshold_table(t, rows);
    write_file(a.output, t.str());
  } else {
    write_threshold_table(std::cout, rows);
  }
  if (!a.histogram.empty()) {
    std::ostringstream h;
    write_histogram(h, score_histogram(scores, labels, a.bins));
    write_file(a.histogram, h.str());
  }
  std::printf("best_threshold %.4f\nbest_f1 %.6f\n", best.threshold, best.f1);
  return 0;
}

// --- eviction-sweep -----------------------------------------------------------

struct EvictionArgs {
  std::vector<std::string> embeddings;
  RepresentationArgs rep;
  std::size_t trace_length = 10000;
  double zipf = 1.0;
  std::vector<double> capacities{10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
  std::vector<std::string> policies{"lru", "lfu"};
  double threshold = 0.80;
  std::uint64_t seed = 0;
  std::string records;
};

int run_eviction_sweep(const EvictionArgs& a) {
  std::vector<EvictionPolicy> policies;
  try {
    for (const auto& p : a.policies) policies.push_back(parse_eviction_policy(p));
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }
  for (double c : a.capacities) {
    if (!(c > 0.0)) throw UsageError("--capacities must be positive percentages");
  }
  if (a.trace_length == 0) throw UsageError("--trace-length must be >= 1");
  const auto sets = load_sets(a.embeddings);
  const auto rep = a.rep.build(sets, nullptr);
  const auto trace = zipf_trace(rep.ids(), a.trace_length, a.zipf, a.seed);
  const auto rows = eviction_sweep(rep, trace, a.capacities, policies, a.threshold);
  write_sweep_table(std::cout, rows);
  if (!a.records.empty()) {
    std::vector<Record> recs;
    for (const auto& r : rows) {
      recs.push_back({"eviction." + std::string(to_string(r.policy)) + "." +
                          fmt_double(r.capacity_percent) + ".hit_ratio",
                      r.hit_ratio});
    }
    std::ostringstream r;
    write_records(r, recs,
                  config_hash("eviction;length=" + std::to_string(a.trace_length) +
                              ";zipf=" + fmt_double(a.zipf) + ";threshold=" +
                              fmt_double(a.threshold)),
                  a.seed);
    write_file(a.records, r.str());
  }
  return 0;
}

// --- serve --------------------------------------------------------------------

struct ServeArgs {
  ServiceConfig config;
  std::vector<std::string> embeddings;
  std::string checkpoint;
  std::string texts;
  std::string embedding_endpoint;
  std::string snapshot;
  std::optional<std::size_t> capacity;
  std::string policy = "lru";
  double threshold = 0.80;
};

int run_serve(ServeArgs& a) {
  auto& c = a.config;
  if (!(a.threshold >= -1.0 && a.threshold <= 1.0)) {
    throw UsageError("--threshold must lie in [-1, 1] (cosine range)");
  }
  c.cache.similarity_threshold = a.threshold;
  c.cache.capacity = a.capacity;
  for (const auto& p : a.embeddings) {
    require_file(p);
    c.embeddings.emplace_back(p);
  }
  if (!a.checkpoint.empty()) {
    require_file(a.checkpoint);
    c.checkpoint = a.checkpoint;
  }
  if (!a.texts.empty()) {
    require_file(a.texts);
    c.texts = a.texts;
  }
  if (!a.embedding_endpoint.empty()) c.embedding_endpoint = a.embedding_endpoint;
  if (!a.snapshot.empty()) c.snapshot = a.snapshot;
  std::pair<std::string, int> address;
  try {
    c.cache.eviction_policy = parse_eviction_policy(a.policy);
    c.validate();
    address = c.listen_address();
  } catch (const ValidationError& e) {
    throw UsageError(e.what());
  }

  // Route SIGINT/SIGTERM to a waiter thread instead of an async handler.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  auto service = make_service(c);
  HttpServer server(*service);
  const int port = server.bind(address.first, address.second);
  std::cout << "listening on " << address.first << ":" << port << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.run();
  // run() also returns if the listener fails; make sure the waiter exits.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();

  if (c.snapshot) {
    service->cache().save_snapshot(*c.snapshot);
    std::cout << "snapshot written to " << c.snapshot->string() << std::endl;
  }
  const auto s = service->stats();
  std::cout << "served " << s.total_requests << " requests (" << s.hits << " hits)" << std::endl;
  return 0;
}

// --- export-report ------------------------------------------------------------

struct ExportArgs {
  std::vector<std::string> records;
  std::string format = "table";
  std::string output;
};

int run_export(const ExportArgs& a) {
  if (a.format != "table" && a.format != "tsv" && a.format != "markdown") {
    throw UsageError("--format must be table, tsv or markdown");
  }
  struct Row {
    std::string metric, value, hash, seed;
  };
  std::vector<Row> rows;
  for (const auto& path : a.records) {
    require_file(path);
    std::ifstream in(path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
        Row r;
        r.metric = j.at("metric").get<std::string>();
        r.value = j.at("value").is_null() ? "null" : j.at("value").dump();
        r.hash = j.at("config_hash").get<std::string>();
        r.seed = j.at("seed").dump();
        rows.push_back(std::move(r));
      } catch (const std::exception& e) {
        throw FormatError(path + ":" + std::to_string(line_no) + ": not a report record (" +
                          e.what() + ")");
      }
    }
  }
  std::ostringstream out;
  if (a.format == "tsv") {
    out << "metric\tvalue\tconfig_hash\tseed\n";
    for (const auto& r : rows) out << r.metric << '\t' << r.value << '\t' << r.hash << '\t' << r.seed << '\n';
  } else if (a.format == "markdown") {
    out << "| metric | value | config_hash | seed |\n|---|---|---|---|\n";
    for (const auto& r : rows) {
      out << "| " << r.metric << " | " << r.value << " | " << r.hash << " | " << r.seed << " |\n";
    }
  } else {
    std::size_t w = 6;
    for (const auto& r : rows) w = std::max(w, r.metric.size());
    char buf[512];
    std::snprintf(buf, sizeof buf, "%-*s  %-22s  %-16s  %s\n", static_cast<int>(w), "metric",
                  "value", "config_hash", "seed");
    out << buf;
    for (const auto& r : rows) {
      std::snprintf(buf, sizeof buf, "%-*s  %-22s  %-16s  %s\n", static_cast<int>(w),
                    r.metric.c_str(), r.value.c_str(), r.hash.c_str(), r.seed.c_str());
      out << buf;
    }
  }
  if (a.output.empty()) std::cout << out.str();
  else write_file(a.output, out.str());
  return 0;
}

// Finds `--config FILE` / `--config=FILE`, removes it and merges the file.
std::vector<std::string> expand_config(std::vector<std::string> args) {
  std::optional<std::string> path;
  std::vector<std::string> rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw UsageError("--config needs a file argument");
      path = args[++i];
    } else if (args[i].starts_with("--config=")) {
      path = args[i].substr(9);
    } else {
      rest.push_back(args[i]);
    }
  }
  if (!path) return rest;
  require_file(*path);
  return merge_config_args(rest, load_config_file(*path));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic cache with an ensemble meta-encoder", "semcache"};
  app.require_subcommand(1);
  app.footer(
      "Every subcommand accepts --config FILE with `key = value` lines; keys are the long\n"
      "flag names without dashes and flags given on the command line win.");

  SyntheticArgs gen;
  auto* gen_cmd = app.add_subcommand("generate-synthetic", "write a synthetic clustered corpus");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--count", gen.config.pairs, "number of pairs");
  gen_cmd->add_option("--positive-fraction", gen.config.positive_fraction);
  gen_cmd->add_option("--seed", gen.config.seed);

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train the meta-encoder");
  tr.cmd = train_cmd;
  train_cmd->add_option("--embeddings", tr.embeddings, "fixture files, in input order")->required();
  train_cmd->add_option("--pairs", tr.pairs, "labelled pairs file")->required();
  train_cmd->add_option("--checkpoint", tr.checkpoint, "output checkpoint")->required();
  train_cmd->add_option("--history", tr.history, "per-epoch history (default <checkpoint>.history.tsv)");
  train_cmd->add_option("--split-out", tr.split_out, "write train/val/test pair files here");
  train_cmd->add_option("--preset", tr.preset, "default (full sizes) or desk (small corpora)");
  train_cmd->add_option("--seed", tr.seed);
  train_cmd->add_option("--hidden-dim", tr.encoder.hidden_dim);
  train_cmd->add_option("--reduced-dim", tr.encoder.reduced_dim);
  train_cmd->add_option("--output-dim", tr.encoder.output_dim);
  train_cmd->add_option("--dropout", tr.encoder.dropout_rate);
  train_cmd->add_option("--leaky-slope", tr.encoder.leaky_slope);
  train_cmd->add_option("--bn-eps", tr.encoder.bn_eps);
  train_cmd->add_option("--bn-momentum", tr.encoder.bn_momentum);
  train_cmd->add_option("--margin", tr.encoder.margin);
  train_cmd->add_option("--learning-rate", tr.train.learning_rate);
  train_cmd->add_option("--weight-decay", tr.train.weight_decay);
  train_cmd->add_option("--scheduler-step", tr.train.scheduler_step);
  train_cmd->add_option("--scheduler-gamma", tr.train.scheduler_gamma);
  train_cmd->add_option("--patience", tr.train.early_stop_patience);
  train_cmd->add_option("--max-epochs", tr.train.max_epochs);
  train_cmd->add_option("--batch-size", tr.train.batch_size);

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "classification report and cache experiments");
  eval_cmd->add_option("--embeddings", ev.embeddings)->required();
  eval_cmd->add_option("--pairs", ev.pairs, "pairs to evaluate")->required();
  ev.rep.add(eval_cmd, "");
  eval_cmd->add_option("--threshold", ev.threshold, "fixed threshold (default 0.80)");
  eval_cmd->add_option("--calibration-pairs", ev.calibration_pairs,
                       "optimize the threshold on these pairs instead");
  eval_cmd->add_option("--dataset-fraction", ev.dataset_fraction, "0.2, 0.4, 0.6, 0.8 or 1.0");
  eval_cmd->add_option("--grid-step", ev.grid_step);
  eval_cmd->add_option("--capacity", ev.capacity);
  eval_cmd->add_option("--policy", ev.policy, "lru | lfu");
  eval_cmd->add_option("--latency", ev.latency, "mock backend latency, seconds");
  eval_cmd->add_option("--mock-seed", ev.mock_seed);
  eval_cmd->add_option("--clock", ev.clock, "simulated (deterministic) | wall");
  eval_cmd->add_option("--seed", ev.seed);
  eval_cmd->add_option("--texts", ev.texts, "id<TAB>text file");
  eval_cmd->add_option("--records", ev.records, "write JSON-lines records here");
  eval_cmd->add_option("--histogram", ev.histogram, "write the score histogram here");
  eval_cmd->add_option("--bins", ev.bins);

  CorrelateArgs co;
  auto* corr_cmd = app.add_subcommand("correlate", "correlation of per-model pair scores");
  corr_cmd->add_option("--embeddings", co.embeddings)->required();
  corr_cmd->add_option("--pairs", co.pairs)->required();
  corr_cmd->add_option("--records", co.records);

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("threshold-sweep", "precision/recall/F1 per threshold");
  sweep_cmd->add_option("--embeddings", sw.embeddings)->required();
  sweep_cmd->add_option("--pairs", sw.pairs)->required();
  sw.rep.add(sweep_cmd, "");
  sweep_cmd->add_option("--grid-step", sw.grid_step);
  sweep_cmd->add_option("--output", sw.output, "write the table here instead of stdout");
  sweep_cmd->add_option("--histogram", sw.histogram);
  sweep_cmd->add_option("--bins", sw.bins);

  EvictionArgs evx;
  auto* evict_cmd = app.add_subcommand("eviction-sweep", "LRU/LFU hit ratio versus capacity");
  evict_cmd->add_option("--embeddings", evx.embeddings)->required();
  evx.rep.add(evict_cmd, "avg");
  evict_cmd->add_option("--trace-length", evx.trace_length);
  evict_cmd->add_option("--zipf", evx.zipf, "Zipf exponent");
  evict_cmd->add_option("--capacities", evx.capacities, "percentages of distinct ids")->delimiter(',');
  evict_cmd->add_option("--policies", evx.policies)->delimiter(',');
  evict_cmd->add_option("--threshold", evx.threshold);
  evict_cmd->add_option("--seed", evx.seed);
  evict_cmd->add_option("--records", evx.records);

  ServeArgs sv;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP caching proxy");
  serve_cmd->add_option("--listen", sv.config.listen, "host:port (port 0 picks one)");
  serve_cmd->add_option("--threshold", sv.threshold);
  serve_cmd->add_option("--capacity", sv.capacity);
  serve_cmd->add_option("--policy", sv.policy);
  serve_cmd->add_option("--checkpoint", sv.checkpoint);
  serve_cmd->add_option("--fusion", sv.config.fusion);
  serve_cmd->add_option("--embeddings", sv.embeddings);
  serve_cmd->add_option("--texts", sv.texts);
  serve_cmd->add_option("--embedding-endpoint", sv.embedding_endpoint);
  serve_cmd->add_option("--backend", sv.config.backend, "mock | http(s) URL");
  serve_cmd->add_option("--mock-latency", sv.config.mock.latency_seconds);
  serve_cmd->add_option("--mock-seed", sv.config.mock.seed);
  serve_cmd->add_option("--snapshot", sv.snapshot, "cache snapshot loaded at start, saved at exit");

  ExportArgs ex;
  auto* export_cmd = app.add_subcommand("export-report", "render JSON-lines records as a table");
  export_cmd->add_option("--records", ex.records)->required();
  export_cmd->add_option("--format", ex.format, "table | tsv | markdown");
  export_cmd->add_option("--output", ex.output);

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config(std::move(args));
    std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }

  try {
    if (*gen_cmd) return run_generate(gen);
    if (*train_cmd) return run_train(tr);
    if (*eval_cmd) return run_evaluate(ev);
    if (*corr_cmd) return run_correlate(co);
    if (*sweep_cmd) return run_threshold_sweep(sw);
    if (*evict_cmd) return run_eviction_sweep(evx);
    if (*serve_cmd) return run_serve(sv);
    if (*export_cmd) return run_export(ex);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const TrainingDivergedError& e) {
    std::cerr << "error: training diverged: " << e.what() << '\n';
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
