#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "semcache/embedding_io.hpp"
#include "semcache/errors.hpp"
#include "semcache/matrix.hpp"

namespace semcache {

// Meta-encoder: fuses the concatenated, normalized base-model embeddings into
// a single task-aligned unit vector.
//
//   h1  = dropout(leaky(bn1(linear1(x))))
//   h2  = dropout(leaky(bn2(linear2(h1)))) + h1
//   h3  = dropout(leaky(bn3(linear3(h2))))
//   out = l2norm(projection(h3))
//
// All math is templated on the scalar so the same code path runs in float for
// training/serving and in double for gradient checking.

struct EncoderConfig {
  std::size_t input_dim = 768;
  std::size_t hidden_dim = 1024;
  std::size_t reduced_dim = 512;
  std::size_t output_dim = 384;
  double dropout_rate = 0.1;
  double leaky_slope = 0.01;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  double margin = 0.5;
  std::uint64_t seed = 0;

  /// Throws ValidationError on out-of-range fields.
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-5;
  int scheduler_step = 5;
  double scheduler_gamma = 0.5;
  int early_stop_patience = 3;
  int max_epochs = 30;
  std::size_t batch_size = 256;
  std::array<double, 3> split_fractions{0.70, 0.15, 0.15};
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Mode { train, eval };

template <typename T>
struct DenseLayer {
  Matrix<T> weight;  // out x in
  Matrix<T> bias;    // 1 x out
  bool operator==(const DenseLayer&) const = default;
};

template <typename T>
struct BatchNormLayer {
  Matrix<T> scale;  // 1 x features
  Matrix<T> shift;
  Matrix<T> running_mean;
  Matrix<T> running_var;
  bool operator==(const BatchNormLayer&) const = default;
};

inline constexpr std::size_t kParameterCount = 14;
inline constexpr std::size_t kBufferCount = 6;

/// Names in the fixed tensor order used by gradients, optimizer state and
/// checkpoint files.
extern const std::array<std::string_view, kParameterCount> kParameterNames;
extern const std::array<std::string_view, kBufferCount> kBufferNames;

template <typename T>
struct EncoderState {
  EncoderConfig config;
  DenseLayer<T> layer1;
  BatchNormLayer<T> norm1;
  DenseLayer<T> layer2;
  BatchNormLayer<T> norm2;
  DenseLayer<T> layer3;
  BatchNormLayer<T> norm3;
  DenseLayer<T> projection;
  Mode mode = Mode::eval;

  /// Kaiming-uniform weights (LeakyReLU gain) seeded from config.seed; batch
  /// norm starts at scale 1, shift 0, running mean 0, running var 1.
  static EncoderState initialize(const EncoderConfig& config);

  std::array<Matrix<T>*, kParameterCount> parameters();
  std::array<const Matrix<T>*, kParameterCount> parameters() const;
  std::array<Matrix<T>*, kBufferCount> buffers();
  std::array<const Matrix<T>*, kBufferCount> buffers() const;

  template <typename U>
  EncoderState<U> cast() const;

  bool operator==(const EncoderState&) const = default;
};

template <typename T>
using ParameterTensors = std::array<Matrix<T>, kParameterCount>;

/// Zero tensors shaped like the state's parameters.
template <typename T>
ParameterTensors<T> zeros_like_parameters(const EncoderState<T>& state);

/// Runs the encoder on a batch (rows = samples). In train mode batch norm uses
/// batch statistics and updates the running ones, and dropout draws from
/// `rng`; needs >= 2 rows. In eval mode rows are independent and `rng` is
/// untouched. Throws ValidationError on a dimension mismatch.
template <typename T>
Matrix<T> forward(EncoderState<T>& state, const Matrix<T>& batch, Mode mode,
                  std::mt19937_64& rng);

/// Eval-mode forward on an immutable state.
template <typename T>
Matrix<T> forward_eval(const EncoderState<T>& state, const Matrix<T>& batch);

template <typename T>
struct ContrastiveLoss {
  T loss{};                // batch mean
  Matrix<T> grad_a;        // d loss / d out_a
  Matrix<T> grad_b;
  std::vector<T> distances;  // 1 - cosine, per pair
};

/// Mean of  y d^2 + (1-y) max(0, margin - d)^2  with d = 1 - cos(a, b).
template <typename T>
ContrastiveLoss<T> contrastive_loss(const Matrix<T>& out_a, const Matrix<T>& out_b,
                                    std::span<const int> labels, T margin);

template <typename T>
struct GradientStep {
  T loss{};
  ParameterTensors<T> gradients;
};

/// One train-mode forward of both sides (a then b, sharing parameters),
/// contrastive loss, and exact backpropagation. Dropout masks drawn during the
/// forward are reused by the backward. Throws StateError if the state is not in
/// train mode.
template <typename T>
GradientStep<T> backward(EncoderState<T>& state, const Matrix<T>& batch_a,
                         const Matrix<T>& batch_b, std::span<const int> labels,
                         std::mt19937_64& rng);

// --- data split ---------------------------------------------------------------

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

/// Per-label stratified partition of indices 0..labels.size()-1. Train and
/// validation hold round(f * n) items overall and test the rest; within each
/// partition every label class gets its proportional share to within one
/// item. Throws ValidationError if a class has fewer than 3 items.
SplitIndices stratified_split(std::span<const int> labels, std::array<double, 3> fractions,
                              std::uint64_t seed);

// --- training -----------------------------------------------------------------

struct AdamState {
  ParameterTensors<float> first_moment;
  ParameterTensors<float> second_moment;
  std::uint64_t step = 0;
  bool operator==(const AdamState&) const = default;
};

struct Checkpoint {
  EncoderConfig config;
  EncoderState<float> state;  // eval-mode snapshot
  int epoch = 0;
  double validation_loss = 0.0;
  AdamState optimizer;
  bool operator==(const Checkpoint&) const = default;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double learning_rate = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> history;
  SplitIndices split;
  bool stopped_early = false;
};

class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

/// Step schedule: lr * gamma^floor((epoch - 1) / step), epochs 1-based.
double learning_rate_at(const TrainConfig& config, int epoch);

/// Splits `pairs` 70/15/15 (stratified), trains with Adam + decoupled weight
/// decay, steps the learning rate, stops early on stalled validation loss and
/// returns the minimum-validation-loss checkpoint.
TrainResult train(const EncoderConfig& encoder_config, const TrainConfig& train_config,
                  std::span<const PairInput> pairs,
                  const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Mean eval-mode contrastive loss over the given pairs.
double evaluate_loss(const EncoderState<float>& state, std::span<const PairInput> pairs,
                     std::span<const std::size_t> indices);

void write_history(std::ostream& out, std::span<const EpochRecord> history);

// --- inference ----------------------------------------------------------------

/// Eval-mode forward. Throws ValidationError if inputs.cols() differs from the
/// checkpoint's input_dim.
Matrix<float> encode(const Checkpoint& checkpoint, const Matrix<float>& inputs);
EmbeddingVector encode_one(const Checkpoint& checkpoint, std::span<const float> input);
/// Encodes every record of a meta-encoder input set (see concat_normalized_set).
EmbeddingSet encode_set(const Checkpoint& checkpoint, const EmbeddingSet& inputs);

// --- checkpoint file ----------------------------------------------------------
//
//   magic "SENC" | version u32 = 1
//   config: input_dim, hidden_dim, reduced_dim, output_dim (u32 each);
//           dropout_rate, leaky_slope, bn_eps, bn_momentum, margin (f64 each);
//           seed (u64)
//   epoch u32 | validation_loss f64 | adam step u64 | tensor count u32 (=48)
//   tensors: rank u32 (=2) | rows u32 | cols u32 | rows*cols float32
//     order: 14 parameters (kParameterNames), 6 batch-norm buffers
//     (kBufferNames), 14 Adam first moments, 14 Adam second moments.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace semcache
