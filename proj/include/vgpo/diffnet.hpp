#pragma once

// Small tanh MLP used as the velocity field v(x, tau, context), with exact
// reverse-mode gradients, an Adam optimizer and a binary checkpoint format.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Core>

namespace vgpo {

enum class Activation : std::uint32_t { tanh = 1 };

/// Layer layout of the velocity network.
///
/// The network input is the feature vector
///   [x (state_dim), tau, sin(2 pi tau), cos(2 pi tau), one_hot(context)]
/// so input_dim = state_dim + 3 + context_count and output_dim = state_dim.
struct Architecture {
  std::size_t state_dim = 2;
  std::size_t context_count = 1;
  std::vector<std::size_t> hidden_dims = {64, 64};
  Activation activation = Activation::tanh;

  static constexpr std::size_t kTimeFeatures = 3;

  std::size_t input_dim() const { return state_dim + kTimeFeatures + context_count; }
  std::size_t output_dim() const { return state_dim; }

  /// [input, hidden..., output]
  std::vector<std::size_t> layer_dims() const {
    std::vector<std::size_t> dims;
    dims.reserve(hidden_dims.size() + 2);
    dims.push_back(input_dim());
    dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
    dims.push_back(output_dim());
    return dims;
  }

  /// Sum over layers of (fan_in + 1) * fan_out.
  std::size_t param_count() const {
    const auto dims = layer_dims();
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) n += (dims[l] + 1) * dims[l + 1];
    return n;
  }

  void validate() const {
    if (state_dim == 0) throw std::invalid_argument("Architecture: state_dim must be >= 1");
    if (context_count == 0) throw std::invalid_argument("Architecture: context_count must be >= 1");
    for (auto h : hidden_dims)
      if (h == 0) throw std::invalid_argument("Architecture: hidden layer width must be >= 1");
    if (activation != Activation::tanh) throw std::invalid_argument("Architecture: unsupported activation");
  }

  bool operator==(const Architecture&) const = default;
};

/// Flat parameter storage. Per layer: weights (fan_out x fan_in, row-major)
/// followed by biases (fan_out).
struct ParamVector {
  std::vector<double> values;

  ParamVector() = default;
  explicit ParamVector(std::size_t n, double fill = 0.0) : values(n, fill) {}
  explicit ParamVector(std::vector<double> v) : values(std::move(v)) {}

  std::size_t size() const { return values.size(); }
  std::span<double> span() { return values; }
  std::span<const double> span() const { return values; }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  bool all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const ParamVector&) const = default;
};

inline double l2_distance(const ParamVector& a, const ParamVector& b) {
  if (a.size() != b.size()) throw std::invalid_argument("l2_distance: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// One network query: state, continuous time in [0, 1] and a context index
/// (encoded one-hot against context_count).
struct NetInput {
  std::span<const double> x;
  double tau = 0.0;
  std::size_t context = 0;
};

/// Activations of one forward pass: acts[l] is the input to layer l (hidden
/// ones post-tanh), output is the network output.
struct Tape {
  std::vector<std::vector<double>> acts;
  std::vector<double> output;
};

struct NetGradient {
  std::vector<double> params;
  std::vector<double> input;  // w.r.t. the feature vector
};

class Mlp {
 public:
  explicit Mlp(Architecture arch) : arch_(std::move(arch)) {
    arch_.validate();
    dims_ = arch_.layer_dims();
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      weight_offset_.push_back(off);
      off += dims_[l] * dims_[l + 1];
      bias_offset_.push_back(off);
      off += dims_[l + 1];
    }
    param_count_ = off;
  }

  const Architecture& architecture() const { return arch_; }
  std::size_t param_count() const { return param_count_; }
  std::size_t layer_count() const { return dims_.size() - 1; }
  std::size_t fan_in(std::size_t layer) const { return dims_[layer]; }
  std::size_t fan_out(std::size_t layer) const { return dims_[layer + 1]; }
  std::size_t weight_offset(std::size_t layer) const { return weight_offset_[layer]; }
  std::size_t bias_offset(std::size_t layer) const { return bias_offset_[layer]; }

  /// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
  ParamVector init_params(std::uint64_t seed) const {
    ParamVector p(param_count_, 0.0);
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < layer_count(); ++l) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in(l)));
      std::uniform_real_distribution<double> u(-bound, bound);
      const std::size_t n = fan_in(l) * fan_out(l);
      for (std::size_t k = 0; k < n; ++k) p[weight_offset(l) + k] = u(rng);
    }
    return p;
  }

  std::vector<double> features(const NetInput& in) const {
    if (in.x.size() != arch_.state_dim) throw std::invalid_argument("Mlp: state dimension mismatch");
    if (!(in.tau >= 0.0 && in.tau <= 1.0)) throw std::invalid_argument("Mlp: tau outside [0, 1]");
    if (in.context >= arch_.context_count) throw std::invalid_argument("Mlp: context index out of range");
    std::vector<double> f(arch_.input_dim(), 0.0);
    for (std::size_t d = 0; d < in.x.size(); ++d) {
      if (!std::isfinite(in.x[d])) throw std::invalid_argument("Mlp: non-finite state input");
      f[d] = in.x[d];
    }
    const double angle = 2.0 * std::numbers::pi * in.tau;
    f[arch_.state_dim] = in.tau;
    f[arch_.state_dim + 1] = std::sin(angle);
    f[arch_.state_dim + 2] = std::cos(angle);
    f[arch_.state_dim + Architecture::kTimeFeatures + in.context] = 1.0;
    return f;
  }

  std::vector<double> forward(const ParamVector& params, const NetInput& in) const {
    return forward_features(params, features(in));
  }

  std::vector<double> forward_features(const ParamVector& params, std::span<const double> feat) const {
    Tape tape;
    record(params, feat, tape);
    return std::move(tape.output);
  }

  /// Forward pass that keeps the activations needed by backward().
  const std::vector<double>& forward(const ParamVector& params, const NetInput& in, Tape& tape) const {
    record(params, features(in), tape);
    return tape.output;
  }

  /// Adds d<upstream, output>/d params for the pass recorded in `tape`, and
  /// optionally d<upstream, output>/d features into input_grad.
  void backward(const ParamVector& params, const Tape& tape, std::span<const double> upstream,
                std::span<double> param_grad, std::span<double> input_grad = {}) const;

  /// Adds d<upstream, forward(params, in)>/d params into param_grad.
  void accumulate_grad(const ParamVector& params, const NetInput& in, std::span<const double> upstream,
                       std::span<double> param_grad) const {
    Tape tape;
    forward(params, in, tape);
    backward(params, tape, upstream, param_grad);
  }

  NetGradient grad(const ParamVector& params, const NetInput& in, std::span<const double> upstream) const {
    return grad_features(params, features(in), upstream);
  }

  NetGradient grad_features(const ParamVector& params, std::span<const double> feat,
                            std::span<const double> upstream) const {
    NetGradient g{std::vector<double>(param_count_, 0.0), std::vector<double>(arch_.input_dim(), 0.0)};
    Tape tape;
    record(params, feat, tape);
    backward(params, tape, upstream, g.params, g.input);
    return g;
  }

 private:
  void check_params(const ParamVector& params) const {
    if (params.size() != param_count_) throw std::invalid_argument("Mlp: parameter vector has wrong length");
  }

  using RowMajorMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using VecMap = Eigen::Map<const Eigen::VectorXd>;

  RowMajorMap weights(const ParamVector& params, std::size_t l) const {
    return RowMajorMap(params.values.data() + weight_offset(l), static_cast<Eigen::Index>(fan_out(l)),
                       static_cast<Eigen::Index>(fan_in(l)));
  }

  void affine(const ParamVector& params, std::size_t l, std::span<const double> in, std::vector<double>& out) const {
    const auto fo = static_cast<Eigen::Index>(fan_out(l));
    out.resize(fan_out(l));
    Eigen::Map<Eigen::VectorXd> z(out.data(), fo);
    z.noalias() = weights(params, l) * VecMap(in.data(), static_cast<Eigen::Index>(in.size()));
    z += VecMap(params.values.data() + bias_offset(l), fo);
  }

  void record(const ParamVector& params, std::span<const double> feat, Tape& tape) const {
    check_params(params);
    if (feat.size() != arch_.input_dim()) throw std::invalid_argument("Mlp: feature length mismatch");
    const std::size_t L = layer_count();
    tape.acts.resize(L);
    tape.acts[0].assign(feat.begin(), feat.end());
    for (std::size_t l = 0; l < L; ++l) {
      auto& out = (l + 1 < L) ? tape.acts[l + 1] : tape.output;
      affine(params, l, tape.acts[l], out);
      if (l + 1 < L)
        for (double& v : out) v = std::tanh(v);
    }
  }

  Architecture arch_;
  std::vector<std::size_t> dims_;
  std::vector<std::size_t> weight_offset_;
  std::vector<std::size_t> bias_offset_;
  std::size_t param_count_ = 0;
};

inline void Mlp::backward(const ParamVector& params, const Tape& tape, std::span<const double> upstream,
                          std::span<double> param_grad, std::span<double> input_grad) const {
  check_params(params);
  if (upstream.size() != arch_.output_dim()) throw std::invalid_argument("Mlp: upstream length mismatch");
  if (param_grad.size() != param_count_) throw std::invalid_argument("Mlp: gradient buffer length mismatch");
  if (!input_grad.empty() && input_grad.size() != arch_.input_dim())
    throw std::invalid_argument("Mlp: input gradient buffer length mismatch");
  if (tape.acts.size() != layer_count()) throw std::invalid_argument("Mlp: tape was not recorded by this network");

  std::vector<double> delta(upstream.begin(), upstream.end());
  std::vector<double> prev;
  for (std::size_t l = layer_count(); l-- > 0;) {
    const auto fi = static_cast<Eigen::Index>(fan_in(l));
    const auto fo = static_cast<Eigen::Index>(fan_out(l));
    const VecMap d(delta.data(), fo);
    const VecMap a(tape.acts[l].data(), fi);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> gw(
        param_grad.data() + weight_offset(l), fo, fi);
    Eigen::Map<Eigen::VectorXd>(param_grad.data() + bias_offset(l), fo) += d;
    gw.noalias() += d * a.transpose();
    if (l == 0 && input_grad.empty()) break;
    prev.resize(fan_in(l));
    Eigen::Map<Eigen::VectorXd> p(prev.data(), fi);
    p.noalias() = weights(params, l).transpose() * d;
    if (l == 0) {
      Eigen::Map<Eigen::VectorXd>(input_grad.data(), fi) += p;
      break;
    }
    // tanh'(z) = 1 - tanh(z)^2; acts[l] holds tanh(z) of the previous layer
    p.array() *= 1.0 - a.array().square();
    delta.swap(prev);
  }
}

// ---------------------------------------------------------------------------
// Adam

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

/// One bias-corrected Adam step descending on `gradient`. To ascend an
/// objective, pass its negated gradient.
inline void adam_update(ParamVector& params, std::span<const double> gradient, AdamState& state,
                        const AdamConfig& cfg) {
  const std::size_t n = params.size();
  if (gradient.size() != n) throw std::invalid_argument("adam_update: gradient length mismatch");
  if (state.m.empty() && state.v.empty()) state = AdamState(n);
  if (state.m.size() != n || state.v.size() != n) throw std::invalid_argument("adam_update: state length mismatch");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    const double g = gradient[i];
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Little-endian binary layout:
//   char[8]  magic "VGPOCKPT"
//   u32      format version (1)
//   u32      activation tag (1 = tanh)
//   u32      state_dim
//   u32      context_count
//   u32      hidden layer count H
//   u32[H]   hidden widths
//   u64      parameter count N
//   f64[N]   parameters (IEEE-754 binary64)

struct Checkpoint {
  Architecture arch;
  ParamVector params;
};

namespace detail {

template <typename T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_integral_v<T> || std::is_same_v<T, double>);
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  std::array<char, sizeof(T)> buf{};
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  os.write(buf.data(), buf.size());
}

template <typename T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

inline constexpr std::array<char, 8> kCheckpointMagic = {'V', 'G', 'P', 'O', 'C', 'K', 'P', 'T'};

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Architecture& arch, const ParamVector& params) {
  if (params.size() != arch.param_count()) throw std::invalid_argument("checkpoint: parameter count mismatch");
  os.write(detail::kCheckpointMagic.data(), detail::kCheckpointMagic.size());
  detail::write_le<std::uint32_t>(os, 1);
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(arch.activation));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(arch.state_dim));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(arch.context_count));
  detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(arch.hidden_dims.size()));
  for (auto h : arch.hidden_dims) detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(h));
  detail::write_le<std::uint64_t>(os, params.size());
  for (double v : params.values) detail::write_le<double>(os, v);
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != detail::kCheckpointMagic) throw std::runtime_error("checkpoint: bad magic");
  if (detail::read_le<std::uint32_t>(is) != 1) throw std::runtime_error("checkpoint: unsupported version");
  Checkpoint ck;
  const auto act = detail::read_le<std::uint32_t>(is);
  if (act != static_cast<std::uint32_t>(Activation::tanh)) throw std::runtime_error("checkpoint: unknown activation");
  ck.arch.activation = Activation::tanh;
  ck.arch.state_dim = detail::read_le<std::uint32_t>(is);
  ck.arch.context_count = detail::read_le<std::uint32_t>(is);
  const auto hidden = detail::read_le<std::uint32_t>(is);
  ck.arch.hidden_dims.resize(hidden);
  for (auto& h : ck.arch.hidden_dims) h = detail::read_le<std::uint32_t>(is);
  ck.arch.validate();
  const auto n = detail::read_le<std::uint64_t>(is);
  if (n != ck.arch.param_count()) throw std::runtime_error("checkpoint: parameter count does not match header");
  ck.params.values.resize(n);
  for (auto& v : ck.params.values) v = detail::read_le<double>(is);
  if (!ck.params.all_finite()) throw std::runtime_error("checkpoint: non-finite parameter");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Architecture& arch, const ParamVector& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  write_checkpoint(os, arch, params);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  return read_checkpoint(is);
}

}  // namespace vgpo
