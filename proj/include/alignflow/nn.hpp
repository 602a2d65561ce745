#ifndef ALIGNFLOW_NN_HPP
#define ALIGNFLOW_NN_HPP

// Fixed-shape MLP velocity field u(x, t, extra; theta) with hand-written
// reverse-mode gradients and a forward-mode directional derivative.
//
// Input layout per sample: [x (dim) | emb(t) | emb(extra_0) | ...] where
// emb(s) = (sin(w_0 s), cos(w_0 s), ..., sin(w_{K-1} s), cos(w_{K-1} s)),
// K = embed_width / 2, with frequencies spaced geometrically in [1, 64].
// Hidden layers apply the activation; the output layer is affine.
// Batches are column-major: one column per sample.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "binary_io.hpp"
#include "error.hpp"
#include "optim.hpp"
#include "random.hpp"

namespace alignflow {

using Eigen::Index;

enum class Activation : std::uint16_t { Tanh = 0, Silu = 1 };

inline std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "silu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "silu") return Activation::Silu;
  throw ValidationError("unknown activation \"" + s + "\" (expected tanh or silu)");
}

struct MlpLayout {
  Index dim = 2;
  Index embed_width = 16;
  Index num_extra = 0;

  Index input_size() const noexcept { return dim + embed_width * (1 + num_extra); }

  friend bool operator==(const MlpLayout&, const MlpLayout&) = default;
};

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;
};

struct MlpParams {
  MlpLayout layout;
  Activation activation = Activation::Tanh;
  std::vector<Layer> layers;

  Index output_size() const { return layers.empty() ? 0 : layers.back().weight.rows(); }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  void validate() const {
    require(layout.dim >= 1, "network dimension must be at least 1");
    require(layout.embed_width >= 0 && layout.embed_width % 2 == 0,
            "embedding width must be even and non-negative");
    require(layout.num_extra >= 0, "extra input count must be non-negative");
    require(!layers.empty(), "network has no layers");
    Index in = layout.input_size();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      require(layers[l].weight.cols() == in, "layer " + std::to_string(l) + " expects " +
                                                 std::to_string(layers[l].weight.cols()) +
                                                 " inputs, previous layer gives " + std::to_string(in));
      require(layers[l].bias.size() == layers[l].weight.rows(),
              "layer " + std::to_string(l) + " bias length does not match its output width");
      require(layers[l].weight.allFinite() && layers[l].bias.allFinite(),
              "layer " + std::to_string(l) + " has non-finite parameters");
      in = layers[l].weight.rows();
    }
    require(in == layout.dim, "network output width " + std::to_string(in) +
                                  " differs from dimension " + std::to_string(layout.dim));
  }

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases, seeded.
  static MlpParams init(const MlpLayout& layout, const std::vector<Index>& hidden,
                        Activation activation, std::uint64_t seed) {
    MlpParams p;
    p.layout = layout;
    p.activation = activation;
    SplitMix64 rng(seed);
    Index in = layout.input_size();
    std::vector<Index> widths = hidden;
    widths.push_back(layout.dim);
    for (const Index out : widths) {
      require(out >= 1, "layer widths must be positive");
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      Layer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd(out)};
      for (Index r = 0; r < out; ++r) {
        for (Index c = 0; c < in; ++c) layer.weight(r, c) = bound * (2.0 * rng.uniform() - 1.0);
      }
      for (Index r = 0; r < out; ++r) layer.bias[r] = bound * (2.0 * rng.uniform() - 1.0);
      p.layers.push_back(std::move(layer));
      in = out;
    }
    return p;
  }

  static MlpParams zeros_like(const MlpParams& other) {
    MlpParams p = other;
    for (auto& l : p.layers) {
      l.weight.setZero();
      l.bias.setZero();
    }
    return p;
  }
};

/// A batch of network inputs; `extra` has one row per extra scalar.
struct MlpInput {
  Eigen::MatrixXd x;
  Eigen::VectorXd t;
  Eigen::MatrixXd extra;

  Index batch() const noexcept { return x.cols(); }

  static MlpInput single(const Eigen::VectorXd& x, double t, const Eigen::VectorXd& extra = {}) {
    MlpInput in;
    in.x = x;
    in.t = Eigen::VectorXd::Constant(1, t);
    in.extra = extra;
    return in;
  }
};

/// Directional perturbation of an MlpInput.
struct MlpTangent {
  Eigen::MatrixXd dx;
  Eigen::VectorXd dt;
  Eigen::MatrixXd dextra;
};

/// Parameter gradients mirroring MlpParams::layers, plus input gradients.
struct GradBundle {
  std::vector<Layer> layers;
  Eigen::MatrixXd grad_x;
  Eigen::VectorXd grad_t;
  Eigen::MatrixXd grad_extra;

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
    }
    return true;
  }
};

namespace detail {

inline double embed_frequency(Index k, Index count) {
  if (count <= 1) return 1.0;
  return std::exp(std::log(64.0) * static_cast<double>(k) / static_cast<double>(count - 1));
}

// Writes emb(s) for each column into rows [row, row + width) of `z`.
inline void embed_rows(Eigen::MatrixXd& z, Index row, Index width, const Eigen::VectorXd& s) {
  const Index count = width / 2;
  for (Index k = 0; k < count; ++k) {
    const double w = embed_frequency(k, count);
    for (Index j = 0; j < s.size(); ++j) {
      z(row + 2 * k, j) = std::sin(w * s[j]);
      z(row + 2 * k + 1, j) = std::cos(w * s[j]);
    }
  }
}

// d emb(s) / ds scaled per column by ds.
inline void embed_tangent_rows(Eigen::MatrixXd& z, Index row, Index width, const Eigen::VectorXd& s,
                               const Eigen::VectorXd& ds) {
  const Index count = width / 2;
  for (Index k = 0; k < count; ++k) {
    const double w = embed_frequency(k, count);
    for (Index j = 0; j < s.size(); ++j) {
      z(row + 2 * k, j) = w * std::cos(w * s[j]) * ds[j];
      z(row + 2 * k + 1, j) = -w * std::sin(w * s[j]) * ds[j];
    }
  }
}

// Contracts the gradient of an embedding block back onto its scalar.
inline Eigen::VectorXd embed_pullback(const Eigen::MatrixXd& g, Index row, Index width,
                                      const Eigen::VectorXd& s) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(s.size());
  const Index count = width / 2;
  for (Index k = 0; k < count; ++k) {
    const double w = embed_frequency(k, count);
    for (Index j = 0; j < s.size(); ++j) {
      out[j] += g(row + 2 * k, j) * w * std::cos(w * s[j]) - g(row + 2 * k + 1, j) * w * std::sin(w * s[j]);
    }
  }
  return out;
}

inline void check_input(const MlpParams& p, const MlpInput& in) {
  const Index b = in.batch();
  require(in.x.rows() == p.layout.dim, "input x has " + std::to_string(in.x.rows()) +
                                           " rows, network expects " + std::to_string(p.layout.dim));
  require(in.t.size() == b, "time vector length does not match batch size");
  if (p.layout.num_extra == 0) {
    require(in.extra.size() == 0, "network takes no extra inputs");
  } else {
    require(in.extra.rows() == p.layout.num_extra && in.extra.cols() == b,
            "extra inputs must be " + std::to_string(p.layout.num_extra) + " x batch");
  }
}

inline Eigen::MatrixXd assemble_input(const MlpParams& p, const MlpInput& in) {
  const auto& lay = p.layout;
  Eigen::MatrixXd z(lay.input_size(), in.batch());
  z.topRows(lay.dim) = in.x;
  embed_rows(z, lay.dim, lay.embed_width, in.t);
  for (Index e = 0; e < lay.num_extra; ++e) {
    embed_rows(z, lay.dim + lay.embed_width * (1 + e), lay.embed_width, in.extra.row(e).transpose());
  }
  return z;
}

inline Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& pre) {
  if (a == Activation::Tanh) return pre.array().tanh().matrix();
  return (pre.array() / (1.0 + (-pre.array()).exp())).matrix();
}

// Elementwise derivative of the activation given pre-activation and output.
inline Eigen::MatrixXd activation_slope(Activation a, const Eigen::MatrixXd& pre,
                                        const Eigen::MatrixXd& post) {
  if (a == Activation::Tanh) return (1.0 - post.array().square()).matrix();
  const Eigen::ArrayXXd s = 1.0 / (1.0 + (-pre.array()).exp());
  return (s * (1.0 + pre.array() * (1.0 - s))).matrix();
}

}  // namespace detail

/// Activations kept for the reverse pass; acts[0] is the assembled input.
struct ForwardPass {
  std::vector<Eigen::MatrixXd> acts;
  std::vector<Eigen::MatrixXd> pres;
  Eigen::MatrixXd output;
};

inline ForwardPass forward_pass(const MlpParams& p, const MlpInput& in) {
  detail::check_input(p, in);
  ForwardPass pass;
  pass.acts.push_back(detail::assemble_input(p, in));
  const std::size_t last = p.layers.size() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    Eigen::MatrixXd pre = p.layers[l].weight * pass.acts.back();
    pre.colwise() += p.layers[l].bias;
    pass.acts.push_back(detail::activate(p.activation, pre));
    pass.pres.push_back(std::move(pre));
  }
  pass.output = p.layers[last].weight * pass.acts.back();
  pass.output.colwise() += p.layers[last].bias;
  return pass;
}

inline Eigen::MatrixXd forward(const MlpParams& p, const MlpInput& in) {
  return forward_pass(p, in).output;
}

inline Eigen::VectorXd forward(const MlpParams& p, const Eigen::VectorXd& x, double t,
                               const Eigen::VectorXd& extra = {}) {
  return forward(p, MlpInput::single(x, t, extra)).col(0);
}

/// Gradient of sum_j <upstream_j, u(input_j)> w.r.t. parameters (summed
/// over the batch) and w.r.t. each input column.
inline GradBundle backward(const MlpParams& p, const MlpInput& in, const ForwardPass& pass,
                           const Eigen::MatrixXd& upstream) {
  require(upstream.rows() == p.layout.dim && upstream.cols() == in.batch(),
          "upstream gradient must be dim x batch");
  GradBundle g;
  g.layers.resize(p.layers.size());
  Eigen::MatrixXd delta = upstream;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    g.layers[l].weight = delta * pass.acts[l].transpose();
    g.layers[l].bias = delta.rowwise().sum();
    delta = p.layers[l].weight.transpose() * delta;
    if (l > 0) {
      delta.array() *= detail::activation_slope(p.activation, pass.pres[l - 1], pass.acts[l]).array();
    }
  }
  const auto& lay = p.layout;
  g.grad_x = delta.topRows(lay.dim);
  g.grad_t = detail::embed_pullback(delta, lay.dim, lay.embed_width, in.t);
  g.grad_extra.resize(lay.num_extra, in.batch());
  for (Index e = 0; e < lay.num_extra; ++e) {
    g.grad_extra.row(e) = detail::embed_pullback(delta, lay.dim + lay.embed_width * (1 + e),
                                                 lay.embed_width, in.extra.row(e).transpose())
                              .transpose();
  }
  return g;
}

inline GradBundle backward(const MlpParams& p, const MlpInput& in, const Eigen::MatrixXd& upstream) {
  return backward(p, in, forward_pass(p, in), upstream);
}

/// Forward-mode derivative of u along `tangent`, one column per sample.
inline Eigen::MatrixXd jvp(const MlpParams& p, const MlpInput& in, const MlpTangent& tangent) {
  detail::check_input(p, in);
  const auto& lay = p.layout;
  require(tangent.dx.rows() == lay.dim && tangent.dx.cols() == in.batch(), "tangent dx must be dim x batch");
  require(tangent.dt.size() == in.batch(), "tangent dt length does not match batch size");
  require(tangent.dextra.rows() == lay.num_extra &&
              (lay.num_extra == 0 || tangent.dextra.cols() == in.batch()),
          "tangent dextra must be num_extra x batch");
  Eigen::MatrixXd z = detail::assemble_input(p, in);
  Eigen::MatrixXd dz(lay.input_size(), in.batch());
  dz.topRows(lay.dim) = tangent.dx;
  detail::embed_tangent_rows(dz, lay.dim, lay.embed_width, in.t, tangent.dt);
  for (Index e = 0; e < lay.num_extra; ++e) {
    detail::embed_tangent_rows(dz, lay.dim + lay.embed_width * (1 + e), lay.embed_width,
                               in.extra.row(e).transpose(), tangent.dextra.row(e).transpose());
  }
  const std::size_t last = p.layers.size() - 1;
  for (std::size_t l = 0; l < last; ++l) {
    Eigen::MatrixXd pre = p.layers[l].weight * z;
    pre.colwise() += p.layers[l].bias;
    Eigen::MatrixXd post = detail::activate(p.activation, pre);
    dz = (detail::activation_slope(p.activation, pre, post).array() *
          (p.layers[l].weight * dz).array())
             .matrix();
    z = std::move(post);
  }
  return p.layers[last].weight * dz;
}

struct MlpAdamState {
  std::vector<Layer> m;
  std::vector<Layer> v;
  long step = 0;
  AdamConfig config;

  static MlpAdamState for_params(const MlpParams& p, AdamConfig cfg = {}) {
    MlpAdamState s;
    s.m = MlpParams::zeros_like(p).layers;
    s.v = s.m;
    s.config = cfg;
    return s;
  }
};

/// Descent step on the loss whose gradient is `grads`.
inline void adam_update(MlpParams& p, const GradBundle& grads, MlpAdamState& state, double lr) {
  require(grads.layers.size() == p.layers.size(), "gradient bundle does not mirror the parameters");
  if (!grads.all_finite()) {
    throw NumericError("non-finite parameter gradient at optimizer step " + std::to_string(state.step + 1));
  }
  if (state.m.empty()) state = MlpAdamState::for_params(p, state.config);
  ++state.step;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    adam_apply(p.layers[l].weight, grads.layers[l].weight, state.m[l].weight, state.v[l].weight,
               state.step, lr, state.config, -1.0);
    adam_apply(p.layers[l].bias, grads.layers[l].bias, state.m[l].bias, state.v[l].bias, state.step,
               lr, state.config, -1.0);
  }
}

// Checkpoint: "ALNP", u16 version, u16 activation, u32 dim, u32 embed_width,
// u32 num_extra, u32 layer count, (u32 rows, u32 cols) per layer, then per
// layer the row-major weight and the bias as little-endian f64.
inline constexpr std::uint16_t kCheckpointVersion = 1;

inline std::vector<char> encode_checkpoint(const MlpParams& p) {
  ByteWriter w;
  w.magic("ALNP");
  w.u16(kCheckpointVersion);
  w.u16(static_cast<std::uint16_t>(p.activation));
  w.u32(static_cast<std::uint32_t>(p.layout.dim));
  w.u32(static_cast<std::uint32_t>(p.layout.embed_width));
  w.u32(static_cast<std::uint32_t>(p.layout.num_extra));
  w.u32(static_cast<std::uint32_t>(p.layers.size()));
  for (const auto& l : p.layers) {
    w.u32(static_cast<std::uint32_t>(l.weight.rows()));
    w.u32(static_cast<std::uint32_t>(l.weight.cols()));
  }
  for (const auto& l : p.layers) {
    for (Index r = 0; r < l.weight.rows(); ++r) {
      for (Index c = 0; c < l.weight.cols(); ++c) w.f64(l.weight(r, c));
    }
    for (Index r = 0; r < l.bias.size(); ++r) w.f64(l.bias[r]);
  }
  return w.bytes();
}

inline MlpParams decode_checkpoint(std::vector<char> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic("ALNP");
  auto at = r.offset();
  if (r.u16() != kCheckpointVersion) throw FormatError("unsupported checkpoint version", at);
  at = r.offset();
  const auto act = r.u16();
  if (act > 1) throw FormatError("unknown activation code " + std::to_string(act), at);
  MlpParams p;
  p.activation = static_cast<Activation>(act);
  p.layout.dim = r.u32();
  p.layout.embed_width = r.u32();
  p.layout.num_extra = r.u32();
  const std::uint32_t count = r.u32();
  std::vector<std::pair<std::uint32_t, std::uint32_t>> dims(count);
  for (auto& [rows, cols] : dims) {
    rows = r.u32();
    cols = r.u32();
  }
  for (const auto& [rows, cols] : dims) {
    Layer l{Eigen::MatrixXd(rows, cols), Eigen::VectorXd(rows)};
    for (std::uint32_t i = 0; i < rows; ++i) {
      for (std::uint32_t j = 0; j < cols; ++j) l.weight(i, j) = r.f64();
    }
    for (std::uint32_t i = 0; i < rows; ++i) l.bias[i] = r.f64();
    p.layers.push_back(std::move(l));
  }
  r.expect_end();
  try {
    p.validate();
  } catch (const ValidationError& e) {
    throw FormatError(std::string("inconsistent checkpoint: ") + e.what(), r.offset());
  }
  return p;
}

inline void write_checkpoint(const std::string& path, const MlpParams& p) {
  write_file(path, encode_checkpoint(p));
}

inline MlpParams read_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace alignflow

#endif  // ALIGNFLOW_NN_HPP
