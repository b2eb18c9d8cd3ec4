#include "semcache/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

namespace semcache {

const std::array<std::string_view, kParameterCount> kParameterNames = {
    "layer1.weight", "layer1.bias", "norm1.scale", "norm1.shift",
    "layer2.weight", "layer2.bias", "norm2.scale", "norm2.shift",
    "layer3.weight", "layer3.bias", "norm3.scale", "norm3.shift",
    "projection.weight", "projection.bias"};

const std::array<std::string_view, kBufferCount> kBufferNames = {
    "norm1.running_mean", "norm1.running_var", "norm2.running_mean",
    "norm2.running_var",  "norm3.running_mean", "norm3.running_var"};

void EncoderConfig::validate() const {
  if (input_dim == 0 || hidden_dim == 0 || reduced_dim == 0 || output_dim == 0) {
    throw ValidationError("encoder dimensions must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ValidationError("dropout_rate must be in [0, 1)");
  }
  if (!(leaky_slope > 0.0)) throw ValidationError("leaky_slope must be positive");
  if (!(bn_eps > 0.0)) throw ValidationError("bn_eps must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) {
    throw ValidationError("bn_momentum must be in (0, 1]");
  }
  if (!(margin > 0.0)) throw ValidationError("margin must be positive");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be non-negative");
  if (scheduler_step < 1) throw ValidationError("scheduler_step must be >= 1");
  if (!(scheduler_gamma > 0.0)) throw ValidationError("scheduler_gamma must be positive");
  if (early_stop_patience < 1) throw ValidationError("early_stop_patience must be >= 1");
  if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
  if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
  const double sum = split_fractions[0] + split_fractions[1] + split_fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");
  for (double f : split_fractions) {
    if (f < 0.0) throw ValidationError("split fractions must be non-negative");
  }
}

// --- state --------------------------------------------------------------------

namespace {

template <typename T>
DenseLayer<T> init_dense(std::size_t in, std::size_t out, double slope, std::mt19937_64& rng) {
  const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
  const double w_bound = gain * std::sqrt(3.0 / static_cast<double>(in));
  const double b_bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> w_dist(-w_bound, w_bound);
  std::uniform_real_distribution<double> b_dist(-b_bound, b_bound);
  DenseLayer<T> layer{Matrix<T>(out, in), Matrix<T>(1, out)};
  for (auto& w : layer.weight.flat()) w = static_cast<T>(w_dist(rng));
  for (auto& b : layer.bias.flat()) b = static_cast<T>(b_dist(rng));
  return layer;
}

template <typename T>
BatchNormLayer<T> init_norm(std::size_t features) {
  return BatchNormLayer<T>{Matrix<T>(1, features, T(1)), Matrix<T>(1, features, T(0)),
                           Matrix<T>(1, features, T(0)), Matrix<T>(1, features, T(1))};
}

}  // namespace

template <typename T>
EncoderState<T> EncoderState<T>::initialize(const EncoderConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const double slope = config.leaky_slope;
  EncoderState s;
  s.config = config;
  s.layer1 = init_dense<T>(config.input_dim, config.hidden_dim, slope, rng);
  s.norm1 = init_norm<T>(config.hidden_dim);
  s.layer2 = init_dense<T>(config.hidden_dim, config.hidden_dim, slope, rng);
  s.norm2 = init_norm<T>(config.hidden_dim);
  s.layer3 = init_dense<T>(config.hidden_dim, config.reduced_dim, slope, rng);
  s.norm3 = init_norm<T>(config.reduced_dim);
  s.projection = init_dense<T>(config.reduced_dim, config.output_dim, slope, rng);
  s.mode = Mode::eval;
  return s;
}

template <typename T>
std::array<Matrix<T>*, kParameterCount> EncoderState<T>::parameters() {
  return {&layer1.weight,     &layer1.bias,     &norm1.scale, &norm1.shift, &layer2.weight,
          &layer2.bias,       &norm2.scale,     &norm2.shift, &layer3.weight, &layer3.bias,
          &norm3.scale,       &norm3.shift,     &projection.weight, &projection.bias};
}

template <typename T>
std::array<const Matrix<T>*, kParameterCount> EncoderState<T>::parameters() const {
  auto p = const_cast<EncoderState*>(this)->parameters();
  std::array<const Matrix<T>*, kParameterCount> out{};
  std::copy(p.begin(), p.end(), out.begin());
  return out;
}

template <typename T>
std::array<Matrix<T>*, kBufferCount> EncoderState<T>::buffers() {
  return {&norm1.running_mean, &norm1.running_var, &norm2.running_mean,
          &norm2.running_var,  &norm3.running_mean, &norm3.running_var};
}

template <typename T>
std::array<const Matrix<T>*, kBufferCount> EncoderState<T>::buffers() const {
  auto b = const_cast<EncoderState*>(this)->buffers();
  std::array<const Matrix<T>*, kBufferCount> out{};
  std::copy(b.begin(), b.end(), out.begin());
  return out;
}

template <typename T>
template <typename U>
EncoderState<U> EncoderState<T>::cast() const {
  EncoderState<U> out;
  out.config = config;
  out.mode = mode;
  auto dst = out.parameters();
  auto src = parameters();
  for (std::size_t i = 0; i < kParameterCount; ++i) *dst[i] = src[i]->template cast<U>();
  auto dst_b = out.buffers();
  auto src_b = buffers();
  for (std::size_t i = 0; i < kBufferCount; ++i) *dst_b[i] = src_b[i]->template cast<U>();
  return out;
}

template <typename T>
ParameterTensors<T> zeros_like_parameters(const EncoderState<T>& state) {
  ParameterTensors<T> out;
  const auto params = state.parameters();
  for (std::size_t i = 0; i < kParameterCount; ++i) {
    out[i] = Matrix<T>(params[i]->rows(), params[i]->cols(), T(0));
  }
  return out;
}

// --- kernels ------------------------------------------------------------------
//
// Every output element is accumulated in a fixed order independent of its row
// position, so a row encodes to the same bits alone or inside any batch.

namespace {

template <typename T>
T dot_fixed(const T* a, const T* b, std::size_t n) {
  T lanes[8] = {};
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    for (std::size_t l = 0; l < 8; ++l) lanes[l] += a[k + l] * b[k + l];
  }
  T tail = 0;
  for (; k < n; ++k) tail += a[k] * b[k];
  return ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5])) +
         ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7])) + tail;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t k = 0; k < n; ++k) y[k] += alpha * x[k];
}

// out = x W^T + b
template <typename T>
Matrix<T> linear_forward(const Matrix<T>& x, const DenseLayer<T>& layer) {
  const std::size_t n = x.rows();
  const std::size_t in = layer.weight.cols();
  const std::size_t out_dim = layer.weight.rows();
  Matrix<T> out(n, out_dim);
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.row(r).data();
    T* orow = out.row(r).data();
    for (std::size_t o = 0; o < out_dim; ++o) {
      orow[o] = dot_fixed(xr, layer.weight.row(o).data(), in) + layer.bias(0, o);
    }
  }
  return out;
}

// Accumulates dW, db and returns dx.
template <typename T>
Matrix<T> linear_backward(const Matrix<T>& grad_out, const Matrix<T>& x, const DenseLayer<T>& layer,
                          Matrix<T>& grad_weight, Matrix<T>& grad_bias) {
  const std::size_t n = x.rows();
  const std::size_t in = layer.weight.cols();
  const std::size_t out_dim = layer.weight.rows();
  Matrix<T> grad_x(n, in, T(0));
  for (std::size_t r = 0; r < n; ++r) {
    const T* g = grad_out.row(r).data();
    const T* xr = x.row(r).data();
    T* gx = grad_x.row(r).data();
    for (std::size_t o = 0; o < out_dim; ++o) {
      if (g[o] == T(0)) continue;
      axpy(g[o], xr, grad_weight.row(o).data(), in);
      grad_bias(0, o) += g[o];
      axpy(g[o], layer.weight.row(o).data(), gx, in);
    }
  }
  return grad_x;
}

template <typename T>
struct BlockCache {
  Matrix<T> input;
  Matrix<T> normalized;  // x-hat
  std::vector<T> inv_std;
  Matrix<T> pre_activation;  // batch-norm output
  Matrix<T> mask;            // empty when dropout is inactive
  Matrix<T> output;
};

template <typename T>
BlockCache<T> block_forward(const Matrix<T>& x, const DenseLayer<T>& dense,
                            BatchNormLayer<T>& norm, const EncoderConfig& cfg, Mode mode,
                            std::mt19937_64& rng) {
  BlockCache<T> c;
  c.input = x;
  Matrix<T> z = linear_forward(x, dense);
  const std::size_t n = z.rows();
  const std::size_t f = z.cols();
  const T eps = static_cast<T>(cfg.bn_eps);
  std::vector<T> mean(f, T(0));
  std::vector<T> var(f, T(0));

  if (mode == Mode::train) {
    for (std::size_t r = 0; r < n; ++r) {
      const T* zr = z.row(r).data();
      for (std::size_t j = 0; j < f; ++j) mean[j] += zr[j];
    }
    for (auto& m : mean) m /= static_cast<T>(n);
    for (std::size_t r = 0; r < n; ++r) {
      const T* zr = z.row(r).data();
      for (std::size_t j = 0; j < f; ++j) {
        const T d = zr[j] - mean[j];
        var[j] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<T>(n);  // biased, used for normalization
    const T momentum = static_cast<T>(cfg.bn_momentum);
    const T unbias = static_cast<T>(n) / static_cast<T>(n - 1);
    for (std::size_t j = 0; j < f; ++j) {
      norm.running_mean(0, j) = (T(1) - momentum) * norm.running_mean(0, j) + momentum * mean[j];
      norm.running_var(0, j) =
          (T(1) - momentum) * norm.running_var(0, j) + momentum * var[j] * unbias;
    }
  } else {
    for (std::size_t j = 0; j < f; ++j) {
      mean[j] = norm.running_mean(0, j);
      var[j] = norm.running_var(0, j);
    }
  }

  c.inv_std.resize(f);
  for (std::size_t j = 0; j < f; ++j) c.inv_std[j] = T(1) / std::sqrt(var[j] + eps);

  c.normalized = Matrix<T>(n, f);
  c.pre_activation = Matrix<T>(n, f);
  c.output = Matrix<T>(n, f);
  const T slope = static_cast<T>(cfg.leaky_slope);
  const bool dropout = mode == Mode::train && cfg.dropout_rate > 0.0;
  if (dropout) c.mask = Matrix<T>(n, f);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - cfg.dropout_rate));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < f; ++j) {
      const T xhat = (z(r, j) - mean[j]) * c.inv_std[j];
      const T y = norm.scale(0, j) * xhat + norm.shift(0, j);
      c.normalized(r, j) = xhat;
      c.pre_activation(r, j) = y;
      T a = y > T(0) ? y : slope * y;
      if (dropout) {
        const T m = unit(rng) >= cfg.dropout_rate ? keep_scale : T(0);
        c.mask(r, j) = m;
        a *= m;
      }
      c.output(r, j) = a;
    }
  }
  return c;
}

// Returns d loss / d block input; accumulates parameter gradients.
template <typename T>
Matrix<T> block_backward(const BlockCache<T>& c, const Matrix<T>& grad_out,
                         const DenseLayer<T>& dense, const BatchNormLayer<T>& norm,
                         const EncoderConfig& cfg, Matrix<T>& g_weight, Matrix<T>& g_bias,
                         Matrix<T>& g_scale, Matrix<T>& g_shift) {
  const std::size_t n = grad_out.rows();
  const std::size_t f = grad_out.cols();
  const T slope = static_cast<T>(cfg.leaky_slope);

  Matrix<T> g_xhat(n, f);
  std::vector<T> sum_g(f, T(0));
  std::vector<T> sum_g_xhat(f, T(0));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < f; ++j) {
      T g = grad_out(r, j);
      if (!c.mask.empty()) g *= c.mask(r, j);
      g *= c.pre_activation(r, j) > T(0) ? T(1) : slope;
      g_scale(0, j) += g * c.normalized(r, j);
      g_shift(0, j) += g;
      const T gx = g * norm.scale(0, j);
      g_xhat(r, j) = gx;
      sum_g[j] += gx;
      sum_g_xhat[j] += gx * c.normalized(r, j);
    }
  }
  // Batch-norm backward through the batch mean and variance.
  const T inv_n = T(1) / static_cast<T>(n);
  Matrix<T> g_z(n, f);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < f; ++j) {
      g_z(r, j) = c.inv_std[j] * (g_xhat(r, j) - inv_n * sum_g[j] -
                                  c.normalized(r, j) * inv_n * sum_g_xhat[j]);
    }
  }
  return linear_backward(g_z, c.input, dense, g_weight, g_bias);
}

template <typename T>
struct ForwardCache {
  BlockCache<T> block1, block2, block3;
  Matrix<T> projected;  // before normalization
  std::vector<T> norms;
  Matrix<T> output;
};

template <typename T>
void check_batch(const EncoderConfig& cfg, const Matrix<T>& batch, Mode mode) {
  if (batch.cols() != cfg.input_dim) {
    throw ValidationError("encoder input has dim " + std::to_string(batch.cols()) +
                          ", checkpoint expects " + std::to_string(cfg.input_dim));
  }
  if (mode == Mode::train && batch.rows() < 2) {
    throw ValidationError("train-mode batch norm needs at least 2 rows");
  }
}

template <typename T>
ForwardCache<T> forward_cached(EncoderState<T>& s, const Matrix<T>& batch, Mode mode,
                               std::mt19937_64& rng) {
  check_batch(s.config, batch, mode);
  ForwardCache<T> c;
  c.block1 = block_forward(batch, s.layer1, s.norm1, s.config, mode, rng);
  c.block2 = block_forward(c.block1.output, s.layer2, s.norm2, s.config, mode, rng);
  Matrix<T> residual = c.block2.output;
  for (std::size_t i = 0; i < residual.size(); ++i) {
    residual.flat()[i] += c.block1.output.flat()[i];
  }
  c.block3 = block_forward(residual, s.layer3, s.norm3, s.config, mode, rng);
  c.projected = linear_forward(c.block3.output, s.projection);
  c.output = c.projected;
  c.norms.resize(c.output.rows());
  for (std::size_t r = 0; r < c.output.rows(); ++r) {
    auto row = c.output.row(r);
    T sq = dot_fixed(row.data(), row.data(), row.size());
    T nrm = std::max(std::sqrt(sq), static_cast<T>(kDegenerateNorm));
    c.norms[r] = nrm;
    for (auto& v : row) v /= nrm;
  }
  return c;
}

template <typename T>
void backward_cached(const EncoderState<T>& s, const ForwardCache<T>& c,
                     const Matrix<T>& grad_output, ParameterTensors<T>& g) {
  const std::size_t n = grad_output.rows();
  const std::size_t d = grad_output.cols();
  // L2 normalization: dP = (g - out (out . g)) / ||P||
  Matrix<T> g_proj(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    const T* o = c.output.row(r).data();
    const T* go = grad_output.row(r).data();
    const T proj = dot_fixed(o, go, d);
    for (std::size_t j = 0; j < d; ++j) g_proj(r, j) = (go[j] - o[j] * proj) / c.norms[r];
  }
  Matrix<T> g_h3 = linear_backward(g_proj, c.block3.output, s.projection, g[12], g[13]);
  Matrix<T> g_h2 =
      block_backward(c.block3, g_h3, s.layer3, s.norm3, s.config, g[8], g[9], g[10], g[11]);
  Matrix<T> g_h1 =
      block_backward(c.block2, g_h2, s.layer2, s.norm2, s.config, g[4], g[5], g[6], g[7]);
  // residual arm
  for (std::size_t i = 0; i < g_h1.size(); ++i) g_h1.flat()[i] += g_h2.flat()[i];
  block_backward(c.block1, g_h1, s.layer1, s.norm1, s.config, g[0], g[1], g[2], g[3]);
}

}  // namespace

template <typename T>
Matrix<T> forward(EncoderState<T>& state, const Matrix<T>& batch, Mode mode,
                  std::mt19937_64& rng) {
  return forward_cached(state, batch, mode, rng).output;
}

template <typename T>
Matrix<T> forward_eval(const EncoderState<T>& state, const Matrix<T>& batch) {
  // Eval mode reads running statistics only, so the const_cast never writes.
  std::mt19937_64 unused(0);
  return forward_cached(const_cast<EncoderState<T>&>(state), batch, Mode::eval, unused).output;
}

template <typename T>
ContrastiveLoss<T> contrastive_loss(const Matrix<T>& out_a, const Matrix<T>& out_b,
                                    std::span<const int> labels, T margin) {
  if (!out_a.same_shape(out_b) || out_a.rows() != labels.size()) {
    throw ValidationError("contrastive_loss: outputs and labels must be row-aligned");
  }
  const std::size_t n = out_a.rows();
  const std::size_t d = out_a.cols();
  ContrastiveLoss<T> res;
  res.grad_a = Matrix<T>(n, d, T(0));
  res.grad_b = Matrix<T>(n, d, T(0));
  res.distances.resize(n);
  if (n == 0) return res;
  const T inv_n = T(1) / static_cast<T>(n);
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const T* a = out_a.row(r).data();
    const T* b = out_b.row(r).data();
    const T na = std::max(std::sqrt(dot_fixed(a, a, d)), static_cast<T>(kDegenerateNorm));
    const T nb = std::max(std::sqrt(dot_fixed(b, b, d)), static_cast<T>(kDegenerateNorm));
    const T ab = dot_fixed(a, b, d);
    const T cos = ab / (na * nb);
    const T dist = T(1) - cos;
    res.distances[r] = dist;
    T d_loss_d_dist;
    if (labels[r] == 1) {
      total += dist * dist;
      d_loss_d_dist = T(2) * dist;
    } else {
      const T hinge = std::max(T(0), margin - dist);
      total += hinge * hinge;
      d_loss_d_dist = T(-2) * hinge;
    }
    d_loss_d_dist *= inv_n;
    if (d_loss_d_dist == T(0)) continue;
    // d dist = -d cos;  d cos / d a = b / (|a||b|) - cos a / |a|^2
    T* ga = res.grad_a.row(r).data();
    T* gb = res.grad_b.row(r).data();
    for (std::size_t j = 0; j < d; ++j) {
      ga[j] = -d_loss_d_dist * (b[j] / (na * nb) - cos * a[j] / (na * na));
      gb[j] = -d_loss_d_dist * (a[j] / (na * nb) - cos * b[j] / (nb * nb));
    }
  }
  res.loss = total * inv_n;
  return res;
}

template <typename T>
GradientStep<T> backward(EncoderState<T>& state, const Matrix<T>& batch_a,
                         const Matrix<T>& batch_b, std::span<const int> labels,
                         std::mt19937_64& rng) {
  if (state.mode != Mode::train) throw StateError("backward requires an encoder in train mode");
  ForwardCache<T> ca = forward_cached(state, batch_a, Mode::train, rng);
  ForwardCache<T> cb = forward_cached(state, batch_b, Mode::train, rng);
  auto loss = contrastive_loss(ca.output, cb.output, labels, static_cast<T>(state.config.margin));
  GradientStep<T> step;
  step.loss = loss.loss;
  step.gradients = zeros_like_parameters(state);
  backward_cached(state, ca, loss.grad_a, step.gradients);
  backward_cached(state, cb, loss.grad_b, step.gradients);
  return step;
}

// --- split --------------------------------------------------------------------

SplitIndices stratified_split(std::span<const int> labels, std::array<double, 3> fractions,
                              std::uint64_t seed) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");
  std::array<std::vector<std::size_t>, 2> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw ValidationError("labels must be 0 or 1");
    by_label[static_cast<std::size_t>(labels[i])].push_back(i);
  }
  for (int label = 0; label < 2; ++label) {
    if (by_label[label].size() < 3) {
      throw ValidationError("label class " + std::to_string(label) + " has " +
                            std::to_string(by_label[label].size()) +
                            " items; stratified split needs at least 3");
    }
  }
  // Partition sizes are fixed for the whole set first; per-class quotas then
  // start from their floors and the leftovers go to the largest remainders.
  const std::size_t total = labels.size();
  std::array<std::size_t, 3> target{};
  target[0] = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(total)));
  target[1] = std::min(total - target[0], static_cast<std::size_t>(std::llround(
                                              fractions[1] * static_cast<double>(total))));
  target[2] = total - target[0] - target[1];
  std::array<std::array<std::size_t, 3>, 2> quota{};
  std::array<std::size_t, 2> class_left{};
  std::array<std::size_t, 3> part_left = target;
  struct Cell {
    double remainder;
    int label;
    int part;
  };
  std::vector<Cell> cells;
  for (int label = 0; label < 2; ++label) {
    const auto n = static_cast<double>(by_label[label].size());
    class_left[label] = by_label[label].size();
    for (int part = 0; part < 3; ++part) {
      const double ideal = fractions[part] * n;
      const auto base = std::min(
          {static_cast<std::size_t>(std::floor(ideal)), class_left[label], part_left[part]});
      quota[label][part] = base;
      class_left[label] -= base;
      part_left[part] -= base;
      cells.push_back({ideal - static_cast<double>(base), label, part});
    }
  }
  std::stable_sort(cells.begin(), cells.end(),
                   [](const Cell& a, const Cell& b) { return a.remainder > b.remainder; });
  for (const auto& c : cells) {
    if (class_left[c.label] > 0 && part_left[c.part] > 0) {
      ++quota[c.label][c.part];
      --class_left[c.label];
      --part_left[c.part];
    }
  }
  for (int label = 0; label < 2; ++label) {
    for (int part = 0; part < 3 && class_left[label] > 0; ++part) {
      const auto extra = std::min(class_left[label], part_left[part]);
      quota[label][part] += extra;
      class_left[label] -= extra;
      part_left[part] -= extra;
    }
  }

  std::mt19937_64 rng(seed);
  SplitIndices out;
  for (int label = 0; label < 2; ++label) {
    auto& members = by_label[label];
    std::shuffle(members.begin(), members.end(), rng);
    const auto n_train = quota[label][0];
    const auto n_val = quota[label][1];
    out.train.insert(out.train.end(), members.begin(), members.begin() + n_train);
    out.validation.insert(out.validation.end(), members.begin() + n_train,
                          members.begin() + n_train + n_val);
    out.test.insert(out.test.end(), members.begin() + n_train + n_val, members.end());
  }
  std::shuffle(out.train.begin(), out.train.end(), rng);
  std::shuffle(out.validation.begin(), out.validation.end(), rng);
  std::shuffle(out.test.begin(), out.test.end(), rng);
  return out;
}

// --- training -----------------------------------------------------------------

double learning_rate_at(const TrainConfig& config, int epoch) {
  const int steps = (std::max(epoch, 1) - 1) / config.scheduler_step;
  return config.learning_rate * std::pow(config.scheduler_gamma, steps);
}

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void gather_batch(std::span<const PairInput> pairs, std::span<const std::size_t> indices,
                  Matrix<float>& a, Matrix<float>& b, std::vector<int>& labels) {
  const std::size_t dim = pairs[indices[0]].input_a.dim();
  a = Matrix<float>(indices.size(), dim);
  b = Matrix<float>(indices.size(), dim);
  labels.resize(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& p = pairs[indices[r]];
    if (p.input_a.dim() != dim || p.input_b.dim() != dim) {
      throw ValidationError("pair inputs have inconsistent dims");
    }
    std::copy(p.input_a.values().begin(), p.input_a.values().end(), a.row(r).begin());
    std::copy(p.input_b.values().begin(), p.input_b.values().end(), b.row(r).begin());
    labels[r] = p.label;
  }
}

// Adam with decoupled weight decay: p <- p - lr*wd*p - lr * m_hat / (sqrt(v_hat) + eps)
void adam_update(EncoderState<float>& state, AdamState& adam, const ParameterTensors<float>& grads,
                 double lr, double weight_decay) {
  ++adam.step;
  const double bias1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(adam.step));
  const double bias2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(adam.step));
  auto params = state.parameters();
  for (std::size_t t = 0; t < kParameterCount; ++t) {
    auto p = params[t]->flat();
    auto m = adam.first_moment[t].flat();
    auto v = adam.second_moment[t].flat();
    const auto g = grads[t].flat();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = kAdamBeta1 * m[i] + (1.0 - kAdamBeta1) * gi;
      const double vi = kAdamBeta2 * v[i] + (1.0 - kAdamBeta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      const double m_hat = mi / bias1;
      const double v_hat = vi / bias2;
      double pi = p[i];
      pi -= lr * weight_decay * pi;
      pi -= lr * m_hat / (std::sqrt(v_hat) + kAdamEps);
      p[i] = static_cast<float>(pi);
    }
  }
}

}  // namespace

double evaluate_loss(const EncoderState<float>& state, std::span<const PairInput> pairs,
                     std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValidationError("evaluate_loss on an empty index set");
  constexpr std::size_t kChunk = 512;
  double total = 0.0;
  Matrix<float> a, b;
  std::vector<int> labels;
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    const auto chunk = indices.subspan(start, std::min(kChunk, indices.size() - start));
    gather_batch(pairs, chunk, a, b, labels);
    const auto out_a = forward_eval(state, a);
    const auto out_b = forward_eval(state, b);
    const auto loss = contrastive_loss(out_a, out_b, labels, static_cast<float>(state.config.margin));
    total += static_cast<double>(loss.loss) * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(indices.size());
}

TrainResult train(const EncoderConfig& encoder_config, const TrainConfig& train_config,
                  std::span<const PairInput> pairs,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  encoder_config.validate();
  train_config.validate();
  for (const auto& p : pairs) {
    if (p.input_a.dim() != encoder_config.input_dim || p.input_b.dim() != encoder_config.input_dim) {
      throw ValidationError("pair input dim " + std::to_string(p.input_a.dim()) +
                            " does not match encoder input_dim " +
                            std::to_string(encoder_config.input_dim));
    }
  }
  std::vector<int> labels(pairs.size());
  std::transform(pairs.begin(), pairs.end(), labels.begin(), [](const PairInput& p) { return p.label; });

  TrainResult result;
  result.split = stratified_split(labels, train_config.split_fractions, train_config.seed);
  const auto& train_idx = result.split.train;
  if (train_idx.size() < 2) throw ValidationError("training split is empty");
  if (result.split.validation.empty()) throw ValidationError("validation split is empty");

  auto state = EncoderState<float>::initialize(encoder_config);
  state.mode = Mode::train;
  AdamState adam{zeros_like_parameters(state), zeros_like_parameters(state), 0};

  std::mt19937_64 shuffle_rng(train_config.seed ^ 0x9E3779B97F4A7C15ull);
  std::mt19937_64 dropout_rng(train_config.seed ^ 0xC2B2AE3D27D4EB4Full);

  // Drop the last partial batch; shrink the batch when the split is smaller
  // than one batch so tiny corpora still train.
  const std::size_t batch = std::min(train_config.batch_size, train_idx.size());
  std::vector<std::size_t> order = train_idx;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  Matrix<float> a, b;
  std::vector<int> batch_labels;

  for (int epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
    const double lr = learning_rate_at(train_config, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start + batch <= order.size(); start += batch) {
      gather_batch(pairs, std::span<const std::size_t>(order).subspan(start, batch), a, b,
                   batch_labels);
      auto step = backward(state, a, b, batch_labels, dropout_rng);
      if (!std::isfinite(step.loss)) {
        throw TrainingDivergedError("training loss became non-finite at epoch " +
                                    std::to_string(epoch) + ", batch " + std::to_string(batches));
      }
      adam_update(state, adam, step.gradients, lr, train_config.weight_decay);
      loss_sum += step.loss;
      ++batches;
    }
    const double val_loss = evaluate_loss(state, pairs, result.split.validation);
    if (!std::isfinite(val_loss)) {
      throw TrainingDivergedError("validation loss became non-finite at epoch " +
                                  std::to_string(epoch));
    }
    EpochRecord record{epoch, loss_sum / static_cast<double>(batches), val_loss, lr};
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);

    if (val_loss < best_val) {
      best_val = val_loss;
      since_best = 0;
      result.best.config = encoder_config;
      result.best.state = state;
      result.best.state.mode = Mode::eval;
      result.best.epoch = epoch;
      result.best.validation_loss = val_loss;
      result.best.optimizer = adam;
    } else if (++since_best >= train_config.early_stop_patience) {
      result.stopped_early = epoch < train_config.max_epochs;
      break;
    }
  }
  return result;
}

void write_history(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch\ttrain_loss\tval_loss\tlr\n";
  const auto old_precision = out.precision(9);
  for (const auto& h : history) {
    out << h.epoch << '\t' << h.train_loss << '\t' << h.val_loss << '\t' << h.learning_rate << '\n';
  }
  out.precision(old_precision);
}

// --- inference ----------------------------------------------------------------

Matrix<float> encode(const Checkpoint& checkpoint, const Matrix<float>& inputs) {
  if (inputs.cols() != checkpoint.config.input_dim) {
    throw ValidationError("encode: input dim " + std::to_string(inputs.cols()) +
                          " does not match checkpoint input_dim " +
                          std::to_string(checkpoint.config.input_dim));
  }
  if (inputs.rows() == 0) return Matrix<float>(0, checkpoint.config.output_dim);
  return forward_eval(checkpoint.state, inputs);
}

EmbeddingVector encode_one(const Checkpoint& checkpoint, std::span<const float> input) {
  Matrix<float> m(1, input.size(), std::vector<float>(input.begin(), input.end()));
  const auto out = encode(checkpoint, m);
  return EmbeddingVector(std::vector<float>(out.row(0).begin(), out.row(0).end()));
}

EmbeddingSet encode_set(const Checkpoint& checkpoint, const EmbeddingSet& inputs) {
  Matrix<float> m(inputs.count(), inputs.dim(),
                  std::vector<float>(inputs.data().begin(), inputs.data().end()));
  auto out = encode(checkpoint, m);
  return EmbeddingSet("encoder", checkpoint.config.output_dim, inputs.ids(),
                      std::move(out.storage()));
}

template struct EncoderState<float>;
template struct EncoderState<double>;
template EncoderState<double> EncoderState<float>::cast<double>() const;
template EncoderState<float> EncoderState<double>::cast<float>() const;
template EncoderState<float> EncoderState<float>::cast<float>() const;
template EncoderState<double> EncoderState<double>::cast<double>() const;
template ParameterTensors<float> zeros_like_parameters(const EncoderState<float>&);
template ParameterTensors<double> zeros_like_parameters(const EncoderState<double>&);
template Matrix<float> forward(EncoderState<float>&, const Matrix<float>&, Mode, std::mt19937_64&);
template Matrix<double> forward(EncoderState<double>&, const Matrix<double>&, Mode,
                                std::mt19937_64&);
template Matrix<float> forward_eval(const EncoderState<float>&, const Matrix<float>&);
template Matrix<double> forward_eval(const EncoderState<double>&, const Matrix<double>&);
template ContrastiveLoss<float> contrastive_loss(const Matrix<float>&, const Matrix<float>&,
                                                std::span<const int>, float);
template ContrastiveLoss<double> contrastive_loss(const Matrix<double>&, const Matrix<double>&,
                                                 std::span<const int>, double);
template GradientStep<float> backward(EncoderState<float>&, const Matrix<float>&,
                                      const Matrix<float>&, std::span<const int>,
                                      std::mt19937_64&);
template GradientStep<double> backward(EncoderState<double>&, const Matrix<double>&,
                                       const Matrix<double>&, std::span<const int>,
                                       std::mt19937_64&);

}  // namespace semcache
