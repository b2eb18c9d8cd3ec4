#include "semcache/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "semcache/errors.hpp"

namespace semcache {

void SyntheticConfig::validate() const {
  if (pairs == 0) throw ValidationError("synthetic: pairs must be >= 1");
  if (!(positive_fraction >= 0.0 && positive_fraction <= 1.0)) {
    throw ValidationError("synthetic: positive_fraction must be in [0, 1]");
  }
  if (topics == 0 || topic_dim + cluster_dim + style_dim == 0) {
    throw ValidationError("synthetic: latent space is empty");
  }
  if (model_dims.empty()) throw ValidationError("synthetic: at least one model is required");
  for (auto d : model_dims) {
    if (d == 0) throw ValidationError("synthetic: model dims must be >= 1");
  }
  if (!(hard_positive_fraction >= 0.0 && hard_positive_fraction <= 1.0)) {
    throw ValidationError("synthetic: hard_positive_fraction must be in [0, 1]");
  }
  if (!(easy_negative_fraction >= 0.0 && easy_negative_fraction <= 1.0)) {
    throw ValidationError("synthetic: easy_negative_fraction must be in [0, 1]");
  }
  for (double v : {topic_scale, cluster_scale, style_scale, question_noise, style_jitter, hard_style_scale, model_gain, model_noise}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("synthetic: scales must be >= 0");
  }
}

namespace {

std::vector<double> gaussian(std::size_t n, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = scale * nd(rng);
  return v;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticConfig& c) {
  c.validate();
  std::mt19937_64 rng(c.seed);
  const std::size_t latent = c.topic_dim + c.cluster_dim + c.style_dim;

  std::vector<std::vector<double>> topic_centers;
  for (std::size_t t = 0; t < c.topics; ++t) topic_centers.push_back(gaussian(c.topic_dim, c.topic_scale, rng));

  const auto positives = static_cast<std::size_t>(std::llround(c.positive_fraction * static_cast<double>(c.pairs)));
  std::vector<int> labels(c.pairs, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(positives), 1);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::uniform_int_distribution<std::size_t> pick_topic(0, c.topics - 1);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto noisy = [&](const std::vector<double>& base, double sigma) {
    std::vector<double> v = base;
    for (auto& x : v) x += sigma * nd(rng);
    return v;
  };

  SyntheticCorpus out;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> latents;
  auto add_question = [&](std::size_t topic, const std::vector<double>& cluster,
                          const std::vector<double>& style) {
    std::vector<double> z;
    z.reserve(latent);
    const auto& tc = topic_centers[topic];
    z.insert(z.end(), tc.begin(), tc.end());
    const auto cl = noisy(cluster, c.question_noise);
    z.insert(z.end(), cl.begin(), cl.end());
    z.insert(z.end(), style.begin(), style.end());
    std::string id = "q" + std::to_string(ids.size());
    out.texts[id] = "synthetic question " + id + " on topic " + std::to_string(topic);
    ids.push_back(id);
    latents.push_back(std::move(z));
    return ids.back();
  };

  for (std::size_t p = 0; p < c.pairs; ++p) {
    const std::size_t topic = pick_topic(rng);
    LabeledPair pair;
    pair.label = labels[p];
    if (pair.label == 1) {
      const auto cluster = gaussian(c.cluster_dim, c.cluster_scale, rng);
      const bool hard = std::bernoulli_distribution(c.hard_positive_fraction)(rng);
      const double scale = hard ? c.hard_style_scale : c.style_scale;
      pair.id_a = add_question(topic, cluster, gaussian(c.style_dim, scale, rng));
      pair.id_b = add_question(topic, cluster, gaussian(c.style_dim, scale, rng));
    } else if (std::bernoulli_distribution(c.easy_negative_fraction)(rng)) {
      std::size_t other = c.topics > 1 ? pick_topic(rng) : topic;
      while (c.topics > 1 && other == topic) other = pick_topic(rng);
      pair.id_a = add_question(topic, gaussian(c.cluster_dim, c.cluster_scale, rng),
                               gaussian(c.style_dim, c.style_scale, rng));
      pair.id_b = add_question(other, gaussian(c.cluster_dim, c.cluster_scale, rng),
                               gaussian(c.style_dim, c.style_scale, rng));
    } else {
      const auto style = gaussian(c.style_dim, c.style_scale, rng);
      const auto cluster_a = gaussian(c.cluster_dim, c.cluster_scale, rng);
      const auto cluster_b = gaussian(c.cluster_dim, c.cluster_scale, rng);
      pair.id_a = add_question(topic, cluster_a, noisy(style, c.style_jitter));
      pair.id_b = add_question(topic, cluster_b, noisy(style, c.style_jitter));
    }
    out.pairs.push_back(std::move(pair));
  }

  for (std::size_t m = 0; m < c.model_dims.size(); ++m) {
    const std::size_t d = c.model_dims[m];
    const auto weights = gaussian(d * latent, c.model_gain / std::sqrt(static_cast<double>(latent)), rng);
    std::vector<float> data(ids.size() * d);
    for (std::size_t q = 0; q < ids.size(); ++q) {
      const auto& z = latents[q];
      for (std::size_t r = 0; r < d; ++r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < latent; ++k) acc += weights[r * latent + k] * z[k];
        data[q * d + r] = static_cast<float>(std::tanh(acc) + c.model_noise * nd(rng));
      }
    }
    out.models.emplace_back("synthetic-" + std::to_string(m), d, ids, std::move(data));
  }
  return out;
}

EncoderConfig desk_encoder_config(std::size_t input_dim, std::uint64_t seed) {
  EncoderConfig c;
  c.input_dim = input_dim;
  c.hidden_dim = 128;
  c.reduced_dim = 64;
  c.output_dim = 64;
  c.dropout_rate = 0.0;
  c.leaky_slope = 0.3;
  c.margin = 1.0;
  c.seed = seed;
  return c;
}

TrainConfig desk_train_config(std::uint64_t seed) {
  TrainConfig c;
  c.learning_rate = 1e-3;
  c.batch_size = 64;
  c.max_epochs = 30;
  c.scheduler_step = 15;
  c.early_stop_patience = 5;
  c.seed = seed;
  return c;
}

void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t m = 0; m < corpus.models.size(); ++m) {
    save_embedding_set(corpus.models[m], dir / ("model-" + std::to_string(m) + ".semb"));
  }
  save_pairs(corpus.pairs, dir / "pairs.tsv");
  const auto& order = corpus.models.empty() ? std::vector<std::string>{} : corpus.models.front().ids();
  save_texts(corpus.texts, order, dir / "texts.tsv");
}

QueryTexts load_texts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open texts file " + path.string());
  QueryTexts texts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected id<TAB>text");
    }
    texts[line.substr(0, tab)] = line.substr(tab + 1);
  }
  return texts;
}

void save_texts(const QueryTexts& texts, const std::vector<std::string>& order,
                const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write texts file " + path.string());
  for (const auto& id : order) {
    if (auto it = texts.find(id); it != texts.end()) out << id << '\t' << it->second << '\n';
  }
  if (!out) throw IoError("failed writing texts file " + path.string());
}

}  // namespace semcache
