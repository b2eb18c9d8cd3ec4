#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "semcache/encoder.hpp"
#include "semcache/metrics.hpp"
#include "support.hpp"

using namespace semcache;

namespace {

EncoderConfig tiny_config(std::size_t in, std::size_t hidden, std::size_t reduced,
                          std::size_t out) {
  EncoderConfig c;
  c.input_dim = in;
  c.hidden_dim = hidden;
  c.reduced_dim = reduced;
  c.output_dim = out;
  c.seed = 42;
  return c;
}

Matrix<float> random_batch(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  Matrix<float> m(rows, cols);
  std::normal_distribution<float> g(0.0f, 1.0f);
  for (auto& v : m.flat()) v = g(rng);
  return m;
}

}  // namespace

TEST_CASE("config validation") {
  EncoderConfig c;
  CHECK_NOTHROW(c.validate());
  c.dropout_rate = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = EncoderConfig{};
  c.hidden_dim = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  TrainConfig t;
  CHECK_NOTHROW(t.validate());
  t.batch_size = 1;
  CHECK_THROWS_AS(t.validate(), ValidationError);
  t = TrainConfig{};
  t.split_fractions = {0.7, 0.2, 0.2};
  CHECK_THROWS_AS(t.validate(), ValidationError);
  t = TrainConfig{};
  t.early_stop_patience = 0;
  CHECK_THROWS_AS(t.validate(), ValidationError);
}

TEST_CASE("default shapes follow the layer chain") {
  const auto s = EncoderState<float>::initialize(EncoderConfig{});
  CHECK(s.layer1.weight.rows() == 1024);
  CHECK(s.layer1.weight.cols() == 768);
  CHECK(s.layer2.weight.rows() == 1024);
  CHECK(s.layer3.weight.rows() == 512);
  CHECK(s.projection.weight.rows() == 384);
  CHECK(s.projection.weight.cols() == 512);
  for (float v : s.norm1.running_var.flat()) CHECK(v > 0.0f);
}

TEST_CASE("eval forward matches the scalar oracle on hand-set weights") {
  auto s = EncoderState<float>::initialize(tiny_config(4, 8, 4, 2));
  int k = 0;
  for (auto* p : s.parameters()) {
    for (auto& v : p->flat()) v = static_cast<float>(0.3 * std::sin(1.7 * ++k));
  }
  for (auto* b : {&s.norm1, &s.norm2, &s.norm3}) {
    for (auto& v : b->running_mean.flat()) v = static_cast<float>(0.1 * std::cos(++k));
    for (auto& v : b->running_var.flat()) v = static_cast<float>(0.5 + 0.4 * std::sin(++k) * std::sin(k));
  }
  s.config.leaky_slope = 0.2;
  std::mt19937_64 rng(1);
  const auto x = random_batch(rng, 3, 4);
  const auto got = forward_eval(s, x);

  oracle::Rows rows(3, std::vector<double>(4));
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) rows[r][c] = x(r, c);
  }
  const auto want = oracle::forward(oracle::scalar_net(s), rows, false);
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 2; ++c) CHECK(got(r, c) == doctest::Approx(want[r][c]).epsilon(1e-5));
  }
}

TEST_CASE("train forward matches the scalar oracle without dropout") {
  auto cfg = tiny_config(5, 6, 3, 4);
  cfg.dropout_rate = 0.0;
  auto s = EncoderState<float>::initialize(cfg).cast<double>();
  std::mt19937_64 rng(9);
  const auto x = random_batch(rng, 6, 5).cast<double>();
  oracle::Rows rows(6, std::vector<double>(5));
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 5; ++c) rows[r][c] = x(r, c);
  }
  const auto want = oracle::forward(oracle::scalar_net(s), rows, true);
  const auto got = forward(s, x, Mode::train, rng);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 0; c < 4; ++c) CHECK(got(r, c) == doctest::Approx(want[r][c]).epsilon(1e-12));
  }
}

TEST_CASE("forward outputs are unit rows and deterministic in eval") {
  auto s = EncoderState<float>::initialize(tiny_config(16, 32, 16, 8));
  std::mt19937_64 rng(4);
  auto x = random_batch(rng, 10, 16);
  for (std::size_t c = 0; c < 16; ++c) x(1, c) = x(0, c);
  const auto out = forward_eval(s, x);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    double n = 0;
    for (float v : out.row(r)) n += static_cast<double>(v) * v;
    CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-5);
  }
  for (std::size_t c = 0; c < 8; ++c) CHECK(out(0, c) == out(1, c));

  std::mt19937_64 untouched(77), reference(77);
  const auto again = forward(s, x, Mode::eval, untouched);
  CHECK(again == out);
  CHECK(untouched() == reference());

  CHECK_THROWS_AS(forward_eval(s, random_batch(rng, 2, 15)), ValidationError);
  CHECK_THROWS_AS(forward(s, random_batch(rng, 1, 16), Mode::train, rng), ValidationError);
}

TEST_CASE("contrastive loss") {
  const Matrix<double> a(1, 2, std::vector<double>{1, 0});
  const Matrix<double> b(1, 2, std::vector<double>{0, 1});
  const Matrix<double> c(1, 2, std::vector<double>{-1, 0});
  const std::vector<int> dup{1}, non{0};

  CHECK(contrastive_loss(a, a, std::span<const int>(dup), 0.5).loss == 0.0);
  // d = 1 >= margin
  CHECK(contrastive_loss(a, b, std::span<const int>(non), 0.5).loss == 0.0);
  CHECK(contrastive_loss(a, a, std::span<const int>(non), 0.5).loss == doctest::Approx(0.25));
  // d = 2 for opposite vectors
  CHECK(contrastive_loss(a, c, std::span<const int>(dup), 0.5).loss == doctest::Approx(4.0));

  // Non-negativity and monotone hinge.
  std::mt19937_64 rng(3);
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step <= 40; ++step) {
    const double angle = step * (3.14159 / 40);
    const Matrix<double> r(1, 2, std::vector<double>{std::cos(angle), std::sin(angle)});
    const double l = contrastive_loss(a, r, std::span<const int>(non), 1.3).loss;
    CHECK(l >= 0.0);
    CHECK(l <= prev + 1e-15);
    prev = l;
  }
}

TEST_CASE("backward") {
  SUBCASE("requires train mode") {
    auto s = EncoderState<float>::initialize(tiny_config(3, 4, 2, 2));
    std::mt19937_64 rng(1);
    const auto x = random_batch(rng, 4, 3);
    const std::vector<int> labels{1, 0, 1, 0};
    CHECK_THROWS_AS(backward(s, x, x, labels, rng), StateError);
  }
  SUBCASE("zero loss gives zero gradients") {
    auto cfg = tiny_config(3, 4, 2, 2);
    cfg.dropout_rate = 0.0;
    auto s = EncoderState<float>::initialize(cfg).cast<double>();
    s.mode = Mode::train;
    std::mt19937_64 rng(1);
    const auto x = random_batch(rng, 4, 3).cast<double>();
    const std::vector<int> dup(4, 1);
    const auto step = backward(s, x, x, dup, rng);
    // 1 - cos(x, x) rounds to ~1e-17 rather than 0
    CHECK(step.loss <= 1e-24);
    for (const auto& g : step.gradients) {
      for (double v : g.flat()) CHECK(std::abs(v) <= 1e-12);
    }
  }
  SUBCASE("tiny config matches finite differences") {
    auto cfg = tiny_config(3, 4, 2, 2);
    const auto r = oracle::gradient_check(cfg, 4, 123);
    INFO("worst parameter " << r.worst_parameter);
    CHECK(r.worst_relative_error <= 1e-4);
  }
  SUBCASE("random configs match finite differences") {
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 5; ++i) {
      const auto cfg = oracle::random_small_config(rng);
      const auto r = oracle::gradient_check(cfg, 5, rng());
      INFO("config " << i << " worst " << r.worst_parameter);
      CHECK(r.worst_relative_error <= 1e-4);
    }
  }
  SUBCASE("identical seeds give bit-identical gradients") {
    auto cfg = tiny_config(6, 8, 4, 3);
    cfg.dropout_rate = 0.3;
    auto s1 = EncoderState<float>::initialize(cfg);
    s1.mode = Mode::train;
    auto s2 = s1;
    std::mt19937_64 data(5);
    const auto a = random_batch(data, 6, 6), b = random_batch(data, 6, 6);
    const std::vector<int> labels{1, 0, 1, 0, 1, 0};
    std::mt19937_64 r1(99), r2(99);
    const auto g1 = backward(s1, a, b, labels, r1);
    const auto g2 = backward(s2, a, b, labels, r2);
    CHECK(g1.loss == g2.loss);
    for (std::size_t t = 0; t < kParameterCount; ++t) CHECK(g1.gradients[t] == g2.gradients[t]);
  }
}

TEST_CASE("stratified split") {
  std::vector<int> labels(100);
  for (std::size_t i = 0; i < 100; ++i) labels[i] = i < 50 ? 1 : 0;
  const auto s = stratified_split(labels, {0.7, 0.15, 0.15}, 7);
  CHECK(s.train.size() == 70);
  CHECK(s.validation.size() == 15);
  CHECK(s.test.size() == 15);
  auto positives = [&](const std::vector<std::size_t>& idx) {
    return std::count_if(idx.begin(), idx.end(), [&](std::size_t i) { return labels[i] == 1; });
  };
  CHECK(positives(s.train) == 35);
  CHECK(positives(s.validation) >= 7);
  CHECK(positives(s.validation) <= 8);
  CHECK(positives(s.test) >= 7);
  CHECK(positives(s.test) <= 8);

  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.validation.begin(), s.validation.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 100);

  const auto again = stratified_split(labels, {0.7, 0.15, 0.15}, 7);
  CHECK(again.train == s.train);
  CHECK(again.validation == s.validation);
  CHECK(again.test == s.test);

  CHECK_THROWS_AS(stratified_split(std::vector<int>{1, 1, 0, 0, 0}, {0.7, 0.15, 0.15}, 1),
                  ValidationError);
}

TEST_CASE("stratified split keeps label rates") {
  std::mt19937_64 rng(30);
  for (int trial = 0; trial < 20; ++trial) {
    std::bernoulli_distribution pos(0.3);
    std::vector<int> labels(1000);
    for (auto& l : labels) l = pos(rng);
    const double rate = std::accumulate(labels.begin(), labels.end(), 0.0) / 1000.0;
    const auto s = stratified_split(labels, {0.7, 0.15, 0.15}, rng());
    for (const auto* part : {&s.train, &s.validation, &s.test}) {
      std::size_t p = 0;
      for (auto i : *part) p += labels[i];
      const double expect = rate * part->size();
      CHECK(std::abs(static_cast<double>(p) - expect) <= 1.0 + 1e-9);
      CHECK(std::abs(static_cast<double>(p) / part->size() - rate) <= 0.01);
    }
  }
}

TEST_CASE("learning rate schedule") {
  TrainConfig t;
  CHECK(learning_rate_at(t, 1) == doctest::Approx(1e-4));
  CHECK(learning_rate_at(t, 5) == doctest::Approx(1e-4));
  CHECK(learning_rate_at(t, 6) == doctest::Approx(0.5e-4));
  CHECK(learning_rate_at(t, 11) == doctest::Approx(0.25e-4));
}

namespace {

// Two tight Gaussian clusters; duplicates come from the same cluster.
std::vector<PairInput> two_cluster_pairs(std::size_t n, std::uint64_t seed,
                                         std::vector<std::vector<float>>* points = nullptr,
                                         std::vector<int>* cluster_of = nullptr) {
  std::mt19937_64 rng(seed);
  const std::size_t dim = 12;
  std::vector<std::vector<float>> centers{testing::random_vector(rng, dim),
                                          testing::random_vector(rng, dim)};
  std::normal_distribution<float> noise(0.0f, 0.15f);
  auto draw = [&](int c) {
    auto v = centers[c];
    for (auto& x : v) x += noise(rng);
    if (points) {
      points->push_back(v);
      cluster_of->push_back(c);
    }
    return normalize(EmbeddingVector(v));
  };
  std::vector<PairInput> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const int ca = static_cast<int>((i / 2) % 2);
    const int cb = label ? ca : 1 - ca;
    out.push_back({draw(ca), draw(cb), label});
  }
  return out;
}

}  // namespace

TEST_CASE("training separates two clusters") {
  std::vector<std::vector<float>> points;
  std::vector<int> cluster_of;
  const auto pairs = two_cluster_pairs(600, 17, &points, &cluster_of);

  // Separability first: nearest centroid must classify every point.
  std::array<std::vector<double>, 2> centroid{std::vector<double>(12), std::vector<double>(12)};
  std::array<double, 2> counts{};
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t j = 0; j < 12; ++j) centroid[cluster_of[i]][j] += points[i][j];
    counts[cluster_of[i]] += 1;
  }
  for (int c = 0; c < 2; ++c) {
    for (auto& v : centroid[c]) v /= counts[c];
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    double d[2] = {0, 0};
    for (int c = 0; c < 2; ++c) {
      for (std::size_t j = 0; j < 12; ++j) d[c] += std::pow(points[i][j] - centroid[c][j], 2);
    }
    correct += (d[1] < d[0] ? 1 : 0) == cluster_of[i];
  }
  REQUIRE(correct == points.size());

  auto ec = tiny_config(12, 32, 16, 8);
  TrainConfig tc;
  tc.learning_rate = 1e-3;
  tc.batch_size = 32;
  tc.max_epochs = 15;
  tc.seed = 3;
  const auto result = train(ec, tc, pairs);

  std::vector<double> scores;
  std::vector<int> labels;
  for (auto i : result.split.validation) {
    const auto a = encode_one(result.best, pairs[i].input_a.values());
    const auto b = encode_one(result.best, pairs[i].input_b.values());
    scores.push_back(cosine(a.values(), b.values()));
    labels.push_back(pairs[i].label);
  }
  const auto choice = optimize_threshold(scores, labels);
  CHECK(choice.f1 >= 0.95);
}

TEST_CASE("training bookkeeping") {
  const auto pairs = two_cluster_pairs(200, 5);
  auto ec = tiny_config(12, 16, 8, 4);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.max_epochs = 1;
  const auto one = train(ec, tc, pairs);
  CHECK(one.history.size() == 1);
  CHECK(one.best.epoch == 1);

  tc.max_epochs = 12;
  tc.learning_rate = 1e-3;
  std::vector<EpochRecord> seen;
  const auto r = train(ec, tc, pairs, [&](const EpochRecord& e) { seen.push_back(e); });
  CHECK(seen.size() == r.history.size());
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  for (const auto& e : r.history) {
    if (e.val_loss < best) {
      best = e.val_loss;
      best_epoch = e.epoch;
    }
    CHECK(e.learning_rate == doctest::Approx(learning_rate_at(tc, e.epoch)));
  }
  CHECK(r.best.epoch == best_epoch);
  CHECK(r.best.validation_loss == doctest::Approx(best));
  CHECK(r.best.state.mode == Mode::eval);
  CHECK(evaluate_loss(r.best.state, pairs, r.split.validation) == doctest::Approx(best).epsilon(1e-6));

  // Early stopping: once validation stalls for `patience` epochs the run ends.
  if (r.stopped_early) {
    CHECK(r.history.back().epoch - best_epoch == tc.early_stop_patience);
  }

  std::ostringstream hist;
  write_history(hist, r.history);
  std::size_t lines = 0;
  std::string line;
  std::istringstream in(hist.str());
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#' && line.rfind("epoch", 0) != 0) {
      ++lines;
      CHECK(std::count(line.begin(), line.end(), '\t') == 3);
    }
  }
  CHECK(lines == r.history.size());

  // Whole trajectory is reproducible.
  const auto again = train(ec, tc, pairs);
  CHECK(again.best == r.best);
}

TEST_CASE("encode") {
  const auto pairs = two_cluster_pairs(100, 8);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.max_epochs = 1;
  const auto cp = train(tiny_config(12, 16, 8, 4), tc, pairs).best;
  Matrix<float> x(3, 12);
  for (std::size_t c = 0; c < 12; ++c) {
    x(0, c) = pairs[0].input_a[c];
    x(1, c) = pairs[1].input_a[c];
    x(2, c) = pairs[0].input_a[c];
  }
  const auto out = encode(cp, x);
  CHECK(out.rows() == 3);
  CHECK(out.cols() == 4);
  CHECK(encode(cp, x) == out);
  for (std::size_t c = 0; c < 4; ++c) CHECK(out(0, c) == out(2, c));
  CHECK_THROWS_AS(encode(cp, Matrix<float>(2, 11)), ValidationError);
}
