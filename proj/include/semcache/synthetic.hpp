#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "semcache/embedding_io.hpp"
#include "semcache/encoder.hpp"
#include "semcache/experiment.hpp"

namespace semcache {

/// Generator for clustered question-pair corpora.
///
/// Each question lives in a latent space made of three blocks. The cluster
/// block is shared only by duplicates. Most non-duplicates are near misses
/// that share the topic and style blocks instead; the rest are unrelated
/// questions. Raw cosine sees shared topic and style as similarity, so only a
/// learned projection can isolate the cluster block. Every "model" is a random
/// linear map of the latent vector followed by tanh and its own noise.
struct SyntheticConfig {
  std::size_t pairs = 2000;
  double positive_fraction = 0.5;
  std::size_t topics = 16;
  std::size_t topic_dim = 4;
  std::size_t cluster_dim = 48;
  std::size_t style_dim = 8;
  double topic_scale = 1.0;
  double cluster_scale = 1.0;
  double style_scale = 1.2;
  double question_noise = 0.1;  // per-question jitter inside its cluster
  double style_jitter = 0.2;    // non-duplicates: deviation from shared style
  /// Share of non-duplicates drawn as unrelated questions (different topic,
  /// independent style) instead of same-topic near misses.
  double easy_negative_fraction = 0.3;
  /// Share of duplicates that are heavy rewordings: their style blocks are
  /// drawn at hard_style_scale, which buries the shared cluster under raw
  /// cosine.
  double hard_positive_fraction = 0.3;
  double hard_style_scale = 2.0;
  std::vector<std::size_t> model_dims{56, 56};
  double model_gain = 0.3;  // pre-tanh scale; small values keep models near-linear
  double model_noise = 0.05;
  std::uint64_t seed = 7;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<EmbeddingSet> models;  // join-compatible, named synthetic-<k>
  std::vector<LabeledPair> pairs;
  QueryTexts texts;  // id -> question text
};

SyntheticCorpus generate_synthetic(const SyntheticConfig& config);

/// Encoder and training settings sized for synthetic corpora of a few
/// thousand pairs. With ~1,400 training pairs the full-size defaults overfit:
/// a near-rectifying slope and dropout leave unseen questions crowded together,
/// and a 0.5 margin stops pushing non-duplicates apart at cosine 0.5.
EncoderConfig desk_encoder_config(std::size_t input_dim, std::uint64_t seed = 1);
TrainConfig desk_train_config(std::uint64_t seed = 1);

/// Writes model-<k>.semb, pairs.tsv and texts.tsv into `dir`.
void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

/// Tab-separated `id<TAB>text` lines; '#' starts a comment line.
QueryTexts load_texts(const std::filesystem::path& path);
void save_texts(const QueryTexts& texts, const std::vector<std::string>& order,
                const std::filesystem::path& path);

}  // namespace semcache
