#pragma once

// Layers built on the autodiff core: MLPs, the permutation-invariant point
// cloud encoder, sinusoidal timestep encoding, Adam, and the GGCK
// checkpoint container.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "graspgen/autodiff.hpp"
#include "graspgen/error.hpp"
#include "graspgen/point_cloud.hpp"
#include "graspgen/random.hpp"

namespace graspgen::nn {

using ad::Matrix;
using ad::Tensor;

enum class Activation { Relu, Gelu };
enum class OutputActivation { None, Sigmoid };

struct MlpSpec {
  std::vector<int> widths;  // input, hidden..., output
  Activation activation = Activation::Relu;
  OutputActivation output = OutputActivation::None;

  void validate() const {
    if (widths.size() < 3) throw InvalidInput("MlpSpec: at least one hidden layer required");
    for (int w : widths)
      if (w <= 0) throw InvalidInput("MlpSpec: widths must be positive");
  }
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)); zero bias.
inline Matrix glorot(int fan_in, int fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Matrix w(fan_in, fan_out);
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(-limit, limit);
  return w;
}

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out

  Linear() = default;
  Linear(int in, int out, Rng& rng, const std::string& name)
      : weight(Tensor::parameter(glorot(in, out, rng), name + ".weight")),
        bias(Tensor::parameter(Matrix::Zero(1, out), name + ".bias")) {}

  Tensor operator()(const Tensor& x) const { return ad::affine(x, weight, bias); }
};

inline Tensor activate(const Tensor& x, Activation a) { return a == Activation::Relu ? ad::relu(x) : ad::gelu(x); }

class Mlp {
 public:
  Mlp() = default;
  Mlp(MlpSpec spec, Rng& rng, const std::string& name) : spec_(std::move(spec)) {
    spec_.validate();
    for (std::size_t i = 0; i + 1 < spec_.widths.size(); ++i)
      layers_.emplace_back(spec_.widths[i], spec_.widths[i + 1], rng, name + "." + std::to_string(i));
  }

  Tensor operator()(Tensor x) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = layers_[i](x);
      if (i + 1 < layers_.size()) x = activate(x, spec_.activation);
    }
    if (spec_.output == OutputActivation::Sigmoid) x = ad::sigmoid(x);
    return x;
  }

  const MlpSpec& spec() const { return spec_; }
  int in_width() const { return spec_.widths.front(); }
  int out_width() const { return spec_.widths.back(); }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : layers_) {
      out.push_back(l.weight);
      out.push_back(l.bias);
    }
    return out;
  }

  /// Sets every weight and bias to zero.
  void zero() {
    for (auto& l : layers_) {
      l.weight.mutable_value().setZero();
      l.bias.mutable_value().setZero();
    }
  }

 private:
  MlpSpec spec_;
  std::vector<Linear> layers_;
};

// ---------------------------------------------------------------------------

/// Shared per-point MLP (3 -> 64 -> 128, ReLU), max-pool over points, then
/// a post-pool MLP to embedding_dim. Invariant to point order.
struct EncoderWeights {
  Mlp per_point;
  Mlp post;
  int embedding_dim = 128;

  EncoderWeights() = default;
  EncoderWeights(int embedding, Rng& rng) : embedding_dim(embedding) {
    if (embedding < 16) throw InvalidInput("encoder: embedding_dim must be >= 16");
    per_point = Mlp({{3, 64, 128}}, rng, "encoder.point");
    post = Mlp({{128, 128, embedding}}, rng, "encoder.post");
  }

  std::vector<Tensor> parameters() const {
    auto a = per_point.parameters();
    auto b = post.parameters();
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }

  /// `points` stacks `groups` clouds of equal size row-wise.
  Tensor forward(const Tensor& points, Eigen::Index groups) const {
    const Tensor features = ad::relu(per_point(points));
    return post(ad::maxpool_over_points(features, groups));
  }
};

inline Eigen::VectorXd encode_cloud(const PointCloud& cloud, const EncoderWeights& w) {
  if (cloud.size() == 0) throw InvalidInput("encode_cloud: empty cloud");
  ad::NoGradGuard no_grad;
  const Tensor pts = Tensor::constant(cloud.points);
  return w.forward(pts, 1).value().row(0).transpose();
}

/// Interleaved sinusoidal pairs: [sin(t / 10000^(2k/dims)), cos(...)]_k.
inline Eigen::VectorXd positional_encoding(double t, int dims) {
  if (dims < 2 || dims % 2 != 0) throw InvalidInput("positional_encoding: dims must be even and >= 2");
  Eigen::VectorXd out(dims);
  for (int k = 0; k < dims / 2; ++k) {
    const double freq = std::pow(10000.0, -2.0 * k / dims);
    out[2 * k] = std::sin(t * freq);
    out[2 * k + 1] = std::cos(t * freq);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list. Parameters without a
/// gradient are treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
      m_.push_back(Matrix::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix::Zero(p.rows(), p.cols()));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() { step(cfg_.lr); }

  void step(double lr) {
    for (const auto& p : params_)
      if (p.has_grad() && !p.grad().allFinite()) throw OptimizerError(p.name(), "non-finite gradient");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (p.has_grad()) {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * p.grad();
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * p.grad().cwiseAbs2();
      } else {
        m_[i] *= cfg_.beta1;
        v_[i] *= cfg_.beta2;
      }
      p.mutable_value().array() -=
          lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
    }
  }

  long steps() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

// ---------------------------------------------------------------------------
// GGCK: "GGCK" | u32 version | u32 count | per tensor:
//   u16 name length | name | u8 rank | u32 dims[rank] | float64 data (row-major)

static_assert(std::endian::native == std::endian::little, "GGCK I/O assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> data;
};

class Checkpoint {
 public:
  void put(NamedTensor t) {
    for (auto& e : entries_) {
      if (e.name == t.name) {
        e = std::move(t);
        return;
      }
    }
    entries_.push_back(std::move(t));
  }

  void put_matrix(const std::string& name, const Matrix& m) {
    NamedTensor t{name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, {}};
    t.data.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) t.data.push_back(m(i, j));
    put(std::move(t));
  }

  void put_scalar(const std::string& name, double v) { put({name, {}, {v}}); }

  void put_vector(const std::string& name, const std::vector<double>& v) {
    put({name, {static_cast<std::uint32_t>(v.size())}, v});
  }

  /// 64-bit values are split into two exactly representable 32-bit halves.
  void put_u64(const std::string& name, std::uint64_t v) {
    put_vector(name, {static_cast<double>(v >> 32), static_cast<double>(v & 0xffffffffULL)});
  }

  bool contains(const std::string& name) const { return find(name) != nullptr; }

  const NamedTensor& at(const std::string& name) const {
    const NamedTensor* t = find(name);
    if (!t) throw FormatError("checkpoint: missing tensor '" + name + "'");
    return *t;
  }

  Matrix matrix(const std::string& name) const {
    const auto& t = at(name);
    if (t.dims.size() != 2) throw FormatError("checkpoint: tensor '" + name + "' is not rank 2");
    Matrix m(t.dims[0], t.dims[1]);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = t.data[k++];
    return m;
  }

  double scalar(const std::string& name) const {
    const auto& t = at(name);
    if (t.data.size() != 1) throw FormatError("checkpoint: tensor '" + name + "' is not a scalar");
    return t.data[0];
  }

  const std::vector<double>& vector(const std::string& name) const { return at(name).data; }

  std::uint64_t u64(const std::string& name) const {
    const auto& v = vector(name);
    if (v.size() != 2) throw FormatError("checkpoint: tensor '" + name + "' is not a u64 pair");
    return (static_cast<std::uint64_t>(v[0]) << 32) | static_cast<std::uint64_t>(v[1]);
  }

  void store(const std::vector<Tensor>& params) {
    for (const auto& p : params) put_matrix(p.name(), p.value());
  }

  /// Copies stored values into tensors with matching names and shapes.
  void restore(std::vector<Tensor>& params) const {
    for (auto& p : params) {
      Matrix m = matrix(p.name());
      if (m.rows() != p.rows() || m.cols() != p.cols())
        throw FormatError("checkpoint: shape mismatch for '" + p.name() + "'");
      p.mutable_value() = std::move(m);
    }
  }

  const std::vector<NamedTensor>& entries() const { return entries_; }

  std::string encode() const {
    std::string out("GGCK", 4);
    append_pod(out, kCheckpointVersion);
    append_pod(out, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& t : entries_) {
      if (t.name.size() > 0xffff) throw FormatError("checkpoint: tensor name too long");
      append_pod(out, static_cast<std::uint16_t>(t.name.size()));
      out += t.name;
      append_pod(out, static_cast<std::uint8_t>(t.dims.size()));
      for (auto d : t.dims) append_pod(out, d);
      out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(double));
    }
    return out;
  }

  static Checkpoint decode(const std::string& bytes) {
    std::size_t pos = 0;
    const auto need = [&](std::size_t n) {
      if (pos + n > bytes.size()) throw FormatError("checkpoint: truncated");
    };
    need(4);
    if (bytes.compare(0, 4, "GGCK") != 0) throw FormatError("checkpoint: bad magic");
    pos = 4;
    const auto read = [&]<typename T>(T& v) {
      need(sizeof(T));
      std::memcpy(&v, bytes.data() + pos, sizeof(T));
      pos += sizeof(T);
    };
    std::uint32_t version = 0, count = 0;
    read(version);
    if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
    read(count);
    Checkpoint ck;
    for (std::uint32_t i = 0; i < count; ++i) {
      NamedTensor t;
      std::uint16_t len = 0;
      read(len);
      need(len);
      t.name.assign(bytes.data() + pos, len);
      pos += len;
      std::uint8_t rank = 0;
      read(rank);
      std::size_t n = 1;
      for (std::uint8_t r = 0; r < rank; ++r) {
        std::uint32_t d = 0;
        read(d);
        t.dims.push_back(d);
        n *= d;
      }
      need(n * sizeof(double));
      t.data.resize(n);
      std::memcpy(t.data.data(), bytes.data() + pos, n * sizeof(double));
      pos += n * sizeof(double);
      ck.entries_.push_back(std::move(t));
    }
    if (pos != bytes.size()) throw FormatError("checkpoint: trailing bytes");
    return ck;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    const std::string b = encode();
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    return decode(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));
  }

 private:
  template <typename T>
  static void append_pod(std::string& out, T v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(T));
  }

  const NamedTensor* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  std::vector<NamedTensor> entries_;
};

}  // namespace graspgen::nn
