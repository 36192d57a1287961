#pragma once

// Dense feed-forward networks with exact reverse-mode gradients, the
// second-order pass needed by a gradient penalty, and Adam.

#include <bit>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridguard/common.hpp"

namespace hybridguard::neural {

enum class Activation { leaky_relu, tanh, linear };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::tanh: return "tanh";
    case Activation::linear: return "linear";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "leaky_relu") return Activation::leaky_relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "linear") return Activation::linear;
  throw ConfigError("unknown activation '" + s + "'");
}

/// Hidden layers always use leaky ReLU; only the output activation varies.
struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> layer_sizes;  // hidden widths
  std::size_t output_dim = 1;
  double leaky_slope = 0.2;
  Activation output_activation = Activation::linear;
  double dropout_rate = 0.0;

  std::size_t num_layers() const { return layer_sizes.size() + 1; }
  std::size_t fan_in(std::size_t l) const { return l == 0 ? input_dim : layer_sizes[l - 1]; }
  std::size_t fan_out(std::size_t l) const { return l == layer_sizes.size() ? output_dim : layer_sizes[l]; }

  void validate() const {
    if (input_dim == 0 || output_dim == 0) throw ConfigError("network dimensions must be positive");
    for (auto s : layer_sizes)
      if (s == 0) throw ConfigError("hidden layer width must be positive");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0,1)");
    if (output_activation == Activation::leaky_relu)
      throw ConfigError("output activation must be tanh or linear");
  }

  nlohmann::json to_json() const {
    return {{"input_dim", input_dim},       {"layer_sizes", layer_sizes},
            {"output_dim", output_dim},     {"leaky_slope", leaky_slope},
            {"output_activation", to_string(output_activation)}, {"dropout_rate", dropout_rate}};
  }

  static MlpSpec from_json(const nlohmann::json& j) {
    MlpSpec s;
    s.input_dim = j.at("input_dim").get<std::size_t>();
    s.layer_sizes = j.at("layer_sizes").get<std::vector<std::size_t>>();
    s.output_dim = j.at("output_dim").get<std::size_t>();
    s.leaky_slope = j.at("leaky_slope").get<double>();
    s.output_activation = parse_activation(j.at("output_activation").get<std::string>());
    s.dropout_rate = j.at("dropout_rate").get<double>();
    s.validate();
    return s;
  }

  bool operator==(const MlpSpec&) const = default;
};

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

struct MlpParams {
  std::vector<DenseLayer> layers;

  static MlpParams zeros_like(const MlpParams& p) {
    MlpParams z;
    for (const auto& l : p.layers)
      z.layers.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
    return z;
  }

  std::size_t size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  bool all_finite() const {
    for (const auto& l : layers)
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    return true;
  }

  MlpParams& operator+=(const MlpParams& o) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weight += o.layers[i].weight;
      layers[i].bias += o.layers[i].bias;
    }
    return *this;
  }

  MlpParams& operator*=(double s) {
    for (auto& l : layers) {
      l.weight *= s;
      l.bias *= s;
    }
    return *this;
  }

  /// Flat view in declaration order: per layer, weight (row-major) then bias.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(size());
    for (const auto& l : layers) {
      out.insert(out.end(), l.weight.data(), l.weight.data() + l.weight.size());
      out.insert(out.end(), l.bias.data(), l.bias.data() + l.bias.size());
    }
    return out;
  }

  double& flat(std::size_t i) {
    for (auto& l : layers) {
      const auto nw = static_cast<std::size_t>(l.weight.size());
      if (i < nw) return l.weight.data()[i];
      i -= nw;
      const auto nb = static_cast<std::size_t>(l.bias.size());
      if (i < nb) return l.bias.data()[i];
      i -= nb;
    }
    throw std::out_of_range("MlpParams::flat index");
  }

  bool operator==(const MlpParams& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i)
      if (layers[i].weight != o.layers[i].weight || layers[i].bias != o.layers[i].bias) return false;
    return true;
  }
};

/// Glorot-uniform weights, zero biases.
inline MlpParams init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng = make_rng(seed, 0x1417u);
  MlpParams p;
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const std::size_t in = spec.fan_in(l), out = spec.fan_out(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    DenseLayer layer{Matrix(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in)),
                     Vector::Zero(static_cast<Eigen::Index>(out))};
    for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = dist(rng);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

enum class Mode { train, eval };

/// Everything `backward` needs from one forward call.
struct ForwardTrace {
  Mode mode = Mode::eval;
  Matrix input;
  std::vector<Matrix> pre;     // pre-activation per layer
  std::vector<Matrix> hidden;  // post-activation (after dropout) per hidden layer
  std::vector<Matrix> masks;   // inverted-dropout multipliers, train mode with dropout only
  Matrix output;
};

namespace detail {

inline Matrix leaky(const Matrix& a, double slope) {
  return a.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

inline Matrix leaky_deriv(const Matrix& a, double slope) {
  return a.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

inline Matrix affine(const Matrix& x, const DenseLayer& layer) {
  Matrix a = x * layer.weight.transpose();
  a.rowwise() += layer.bias.transpose();
  return a;
}

inline void check_params(const MlpSpec& spec, const MlpParams& params) {
  if (params.layers.size() != spec.num_layers()) throw DataError("parameter layer count does not match spec");
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    const auto& L = params.layers[l];
    if (L.weight.rows() != static_cast<Eigen::Index>(spec.fan_out(l)) ||
        L.weight.cols() != static_cast<Eigen::Index>(spec.fan_in(l)) || L.bias.size() != L.weight.rows())
      throw DataError("parameter shapes do not match spec at layer " + std::to_string(l));
  }
}

}  // namespace detail

inline ForwardTrace forward(const MlpParams& params, const MlpSpec& spec, const Matrix& batch, Mode mode, Rng& rng) {
  detail::check_params(spec, params);
  if (batch.cols() != static_cast<Eigen::Index>(spec.input_dim))
    throw DataError("batch width " + std::to_string(batch.cols()) + " != input_dim " + std::to_string(spec.input_dim));
  if (!batch.allFinite()) throw NumericError("non-finite network input");

  ForwardTrace t;
  t.mode = mode;
  t.input = batch;
  const bool dropout = mode == Mode::train && spec.dropout_rate > 0.0;
  const double keep = 1.0 - spec.dropout_rate;
  std::bernoulli_distribution coin(keep);

  const Matrix* h = &t.input;
  for (std::size_t l = 0; l + 1 < spec.num_layers(); ++l) {
    t.pre.push_back(detail::affine(*h, params.layers[l]));
    Matrix act = detail::leaky(t.pre.back(), spec.leaky_slope);
    if (dropout) {
      Matrix mask(act.rows(), act.cols());
      for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = coin(rng) ? 1.0 / keep : 0.0;
      act.array() *= mask.array();
      t.masks.push_back(std::move(mask));
    }
    t.hidden.push_back(std::move(act));
    h = &t.hidden.back();
  }
  t.pre.push_back(detail::affine(*h, params.layers.back()));
  t.output = spec.output_activation == Activation::tanh ? Matrix(t.pre.back().array().tanh()) : t.pre.back();
  return t;
}

inline ForwardTrace forward(const MlpParams& params, const MlpSpec& spec, const Matrix& batch, Mode mode,
                            std::uint64_t seed = 0) {
  Rng rng = make_rng(seed, 0xd20u);
  return forward(params, spec, batch, mode, rng);
}

struct Gradients {
  MlpParams params;
  Matrix input;
};

/// Reverse-mode pass for a scalar objective whose gradient with respect to the
/// network output is `output_gradient`.
inline Gradients backward(const MlpParams& params, const MlpSpec& spec, const ForwardTrace& trace,
                          const Matrix& output_gradient) {
  detail::check_params(spec, params);
  if (output_gradient.rows() != trace.output.rows() || output_gradient.cols() != trace.output.cols())
    throw DataError("output gradient shape does not match forward output");
  const std::size_t L = spec.num_layers();
  Gradients g{MlpParams::zeros_like(params), {}};

  Matrix delta = output_gradient;
  if (spec.output_activation == Activation::tanh)
    delta.array() *= 1.0 - trace.output.array().square();

  for (std::size_t l = L; l-- > 0;) {
    const Matrix& in = l == 0 ? trace.input : trace.hidden[l - 1];
    g.params.layers[l].weight.noalias() = delta.transpose() * in;
    g.params.layers[l].bias = delta.colwise().sum().transpose();
    Matrix dh = delta * params.layers[l].weight;
    if (l == 0) {
      g.input = std::move(dh);
      break;
    }
    if (!trace.masks.empty()) dh.array() *= trace.masks[l - 1].array();
    delta = dh.array() * detail::leaky_deriv(trace.pre[l - 1], spec.leaky_slope).array();
  }
  return g;
}

struct PenaltyResult {
  double value = 0.0;
  MlpParams gradient;
  Vector grad_norms;  // per-row ‖∇x D‖ over the penalized columns
};

/// Gradient penalty λ·mean((‖∇x D(x)‖ − 1)²) and its exact gradient with
/// respect to the critic parameters. Only the first `penalized_cols` input
/// columns enter the norm (the rest carry conditioning labels). The critic
/// must have a single linear output; dropout is not applied.
///
/// With leaky-ReLU hidden units the input gradient is a product of weight
/// matrices and a fixed 0/1-or-slope derivative pattern, whose own derivative
/// vanishes almost everywhere. So bias gradients are zero and weight gradients
/// come from differentiating that product chain.
inline PenaltyResult penalty_param_gradient(const MlpParams& params, const MlpSpec& spec, const Matrix& x_hat,
                                            double lambda, std::size_t penalized_cols = 0) {
  if (spec.output_dim != 1 || spec.output_activation != Activation::linear)
    throw ConfigError("gradient penalty requires a critic with one linear output");
  if (penalized_cols == 0) penalized_cols = spec.input_dim;
  if (penalized_cols > spec.input_dim) throw ConfigError("penalized_cols exceeds input_dim");

  const ForwardTrace t = forward(params, spec, x_hat, Mode::eval);
  const std::size_t L = spec.num_layers();
  const Eigen::Index B = x_hat.rows();
  const Eigen::Index p = static_cast<Eigen::Index>(penalized_cols);

  // u[l] = ∂D/∂(pre-activation of layer l), rows x fan_out(l).
  std::vector<Matrix> u(L);
  std::vector<Matrix> deriv(L - 1);
  for (std::size_t l = 0; l + 1 < L; ++l) deriv[l] = detail::leaky_deriv(t.pre[l], spec.leaky_slope);
  u[L - 1] = Matrix::Ones(B, 1);
  for (std::size_t l = L - 1; l > 0; --l)
    u[l - 1] = (u[l] * params.layers[l].weight).array() * deriv[l - 1].array();
  const Matrix grad_x = u[0] * params.layers[0].weight;

  PenaltyResult r{0.0, MlpParams::zeros_like(params), Vector::Zero(B)};
  if (B == 0) return r;
  Matrix adj = Matrix::Zero(B, grad_x.cols());
  const double scale = lambda / static_cast<double>(B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const double norm = grad_x.row(i).head(p).norm();
    r.grad_norms[i] = norm;
    r.value += scale * (norm - 1.0) * (norm - 1.0);
    if (norm > 0.0) adj.row(i).head(p) = (scale * 2.0 * (norm - 1.0) / norm) * grad_x.row(i).head(p);
  }

  // Reverse the chain grad_x = u0 W0, u[l-1] = (u[l] W_l) ⊙ deriv[l-1].
  r.gradient.layers[0].weight.noalias() = u[0].transpose() * adj;
  Matrix u_adj = adj * params.layers[0].weight.transpose();
  for (std::size_t l = 1; l < L; ++l) {
    const Matrix t_adj = u_adj.array() * deriv[l - 1].array();
    r.gradient.layers[l].weight.noalias() = u[l].transpose() * t_adj;
    u_adj = t_adj * params.layers[l].weight.transpose();
  }
  return r;
}

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  nlohmann::json to_json() const {
    return {{"learning_rate", learning_rate}, {"beta1", beta1}, {"beta2", beta2}, {"epsilon", epsilon}};
  }
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  MlpParams m;
  MlpParams v;

  static AdamState for_params(const MlpParams& p, AdamConfig cfg) {
    return {cfg, 0, MlpParams::zeros_like(p), MlpParams::zeros_like(p)};
  }
};

/// One bias-corrected Adam update applied in place.
inline void adam_step(AdamState& state, MlpParams& params, const MlpParams& grad) {
  if (!grad.all_finite()) throw NumericError("non-finite gradient in Adam update");
  if (state.m.layers.size() != params.layers.size()) throw DataError("Adam state does not match parameters");
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(c.beta1, t);
  const double corr2 = 1.0 - std::pow(c.beta2, t);
  auto update = [&](auto& w, auto& m, auto& v, const auto& g) {
    m.array() = c.beta1 * m.array() + (1.0 - c.beta1) * g.array();
    v.array() = c.beta2 * v.array() + (1.0 - c.beta2) * g.array().square();
    w.array() -= c.learning_rate * (m.array() / corr1) / ((v.array() / corr2).sqrt() + c.epsilon);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    update(params.layers[l].weight, state.m.layers[l].weight, state.v.layers[l].weight, grad.layers[l].weight);
    update(params.layers[l].bias, state.m.layers[l].bias, state.v.layers[l].bias, grad.layers[l].bias);
  }
}

// ---------------------------------------------------------------------------
// Serialization: "HGNN" magic, u32 format version, u64 header length, JSON
// header, then little-endian f64 arrays per layer (weight row-major, bias).

inline constexpr std::uint32_t kParamFormatVersion = 1;

namespace detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  }
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("truncated parameter stream");
  return to_little(v);
}

}  // namespace detail

inline void write_params(std::ostream& out, const MlpSpec& spec, const std::vector<const MlpParams*>& blocks,
                         nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json header = {{"format_version", kParamFormatVersion}, {"spec", spec.to_json()}, {"blocks", blocks.size()}};
  nlohmann::json shapes = nlohmann::json::array();
  for (std::size_t l = 0; l < spec.num_layers(); ++l) shapes.push_back({spec.fan_out(l), spec.fan_in(l)});
  header["layer_shapes"] = shapes;
  header["extra"] = std::move(extra);
  const std::string text = header.dump();
  out.write("HGNN", 4);
  detail::put<std::uint32_t>(out, kParamFormatVersion);
  detail::put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const MlpParams* p : blocks) {
    detail::check_params(spec, *p);
    for (double v : p->flatten()) detail::put<double>(out, v);
  }
}

inline void write_params(std::ostream& out, const MlpSpec& spec, const MlpParams& params, std::uint64_t seed) {
  write_params(out, spec, {&params}, {{"seed", seed}});
}

struct ParamFile {
  MlpSpec spec;
  std::vector<MlpParams> blocks;
  nlohmann::json extra;
};

inline ParamFile read_params(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "HGNN", 4) != 0) throw DataError("not a network parameter file");
  const auto version = detail::get<std::uint32_t>(in);
  if (version != kParamFormatVersion) throw DataError("unsupported parameter format version " + std::to_string(version));
  const auto len = detail::get<std::uint64_t>(in);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError("truncated parameter header");
  const auto header = nlohmann::json::parse(text);
  ParamFile f;
  f.spec = MlpSpec::from_json(header.at("spec"));
  f.extra = header.value("extra", nlohmann::json::object());
  const auto n_blocks = header.at("blocks").get<std::size_t>();
  for (std::size_t b = 0; b < n_blocks; ++b) {
    MlpParams p;
    for (std::size_t l = 0; l < f.spec.num_layers(); ++l) {
      DenseLayer layer{Matrix(static_cast<Eigen::Index>(f.spec.fan_out(l)), static_cast<Eigen::Index>(f.spec.fan_in(l))),
                       Vector(static_cast<Eigen::Index>(f.spec.fan_out(l)))};
      for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = detail::get<double>(in);
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias.data()[i] = detail::get<double>(in);
      p.layers.push_back(std::move(layer));
    }
    f.blocks.push_back(std::move(p));
  }
  return f;
}

}  // namespace hybridguard::neural
