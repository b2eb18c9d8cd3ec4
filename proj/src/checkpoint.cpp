#include <fstream>

#include "semcache/binary_io.hpp"
#include "semcache/encoder.hpp"

namespace semcache {

namespace {

constexpr std::string_view kCheckpointMagic = "SENC";
constexpr std::uint32_t kTensorCount = kParameterCount * 3 + kBufferCount;

void write_tensor(std::ostream& out, const Matrix<float>& m) {
  binary::write_uint(out, std::uint32_t{2});
  binary::write_uint(out, static_cast<std::uint32_t>(m.rows()));
  binary::write_uint(out, static_cast<std::uint32_t>(m.cols()));
  binary::write_f32_span(out, m.flat());
}

void read_tensor(binary::Reader& r, Matrix<float>& expected_shape, std::string_view name) {
  const auto rank = r.read_uint<std::uint32_t>("tensor rank");
  const auto rows = r.read_uint<std::uint32_t>("tensor rows");
  const auto cols = r.read_uint<std::uint32_t>("tensor cols");
  if (rank != 2 || rows != expected_shape.rows() || cols != expected_shape.cols()) {
    throw FormatError("checkpoint tensor '" + std::string(name) + "' has shape " +
                      std::to_string(rows) + "x" + std::to_string(cols) + " (rank " +
                      std::to_string(rank) + "), config implies " +
                      std::to_string(expected_shape.rows()) + "x" +
                      std::to_string(expected_shape.cols()));
  }
  r.read_f32_span(expected_shape.flat(), name);
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& cp) {
  const auto& c = cp.config;
  binary::write_magic(out, kCheckpointMagic);
  binary::write_uint(out, kCheckpointVersion);
  binary::write_uint(out, static_cast<std::uint32_t>(c.input_dim));
  binary::write_uint(out, static_cast<std::uint32_t>(c.hidden_dim));
  binary::write_uint(out, static_cast<std::uint32_t>(c.reduced_dim));
  binary::write_uint(out, static_cast<std::uint32_t>(c.output_dim));
  binary::write_f64(out, c.dropout_rate);
  binary::write_f64(out, c.leaky_slope);
  binary::write_f64(out, c.bn_eps);
  binary::write_f64(out, c.bn_momentum);
  binary::write_f64(out, c.margin);
  binary::write_uint(out, c.seed);
  binary::write_uint(out, static_cast<std::uint32_t>(cp.epoch));
  binary::write_f64(out, cp.validation_loss);
  binary::write_uint(out, cp.optimizer.step);
  binary::write_uint(out, kTensorCount);
  for (const auto* p : cp.state.parameters()) write_tensor(out, *p);
  for (const auto* b : cp.state.buffers()) write_tensor(out, *b);
  for (const auto& m : cp.optimizer.first_moment) write_tensor(out, m);
  for (const auto& v : cp.optimizer.second_moment) write_tensor(out, v);
}

Checkpoint read_checkpoint(std::istream& in) {
  binary::Reader r(in);
  r.expect_magic(kCheckpointMagic, "encoder checkpoint");
  const auto version = r.read_uint<std::uint32_t>("checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                      " (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint cp;
  auto& c = cp.config;
  c.input_dim = r.read_uint<std::uint32_t>("input_dim");
  c.hidden_dim = r.read_uint<std::uint32_t>("hidden_dim");
  c.reduced_dim = r.read_uint<std::uint32_t>("reduced_dim");
  c.output_dim = r.read_uint<std::uint32_t>("output_dim");
  c.dropout_rate = r.read_f64("dropout_rate");
  c.leaky_slope = r.read_f64("leaky_slope");
  c.bn_eps = r.read_f64("bn_eps");
  c.bn_momentum = r.read_f64("bn_momentum");
  c.margin = r.read_f64("margin");
  c.seed = r.read_uint<std::uint64_t>("seed");
  try {
    c.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }
  cp.epoch = static_cast<int>(r.read_uint<std::uint32_t>("epoch"));
  cp.validation_loss = r.read_f64("validation_loss");
  cp.optimizer.step = r.read_uint<std::uint64_t>("optimizer step");
  const auto tensors = r.read_uint<std::uint32_t>("tensor count");
  if (tensors != kTensorCount) {
    throw FormatError("checkpoint holds " + std::to_string(tensors) + " tensors, expected " +
                      std::to_string(kTensorCount));
  }
  // Shapes come from a freshly initialized state; values are overwritten.
  cp.state = EncoderState<float>::initialize(c);
  cp.state.mode = Mode::eval;
  auto params = cp.state.parameters();
  for (std::size_t i = 0; i < kParameterCount; ++i) read_tensor(r, *params[i], kParameterNames[i]);
  auto buffers = cp.state.buffers();
  for (std::size_t i = 0; i < kBufferCount; ++i) read_tensor(r, *buffers[i], kBufferNames[i]);
  cp.optimizer.first_moment = zeros_like_parameters(cp.state);
  cp.optimizer.second_moment = zeros_like_parameters(cp.state);
  for (std::size_t i = 0; i < kParameterCount; ++i) {
    read_tensor(r, cp.optimizer.first_moment[i], kParameterNames[i]);
  }
  for (std::size_t i = 0; i < kParameterCount; ++i) {
    read_tensor(r, cp.optimizer.second_moment[i], kParameterNames[i]);
  }
  for (std::size_t i = 1; i < kBufferCount; i += 2) {
    for (float var : buffers[i]->flat()) {
      if (!(var > 0.0f)) throw FormatError("checkpoint batch-norm running variance is not positive");
    }
  }
  return cp;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_checkpoint(out, checkpoint);
  out.flush();
  if (!out) throw IoError("short write: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  try {
    return read_checkpoint(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace semcache
