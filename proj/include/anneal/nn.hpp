#pragma once

// Dense network substrate: row-major matrices, fully connected layers,
// sequential MLPs with exact backprop, Adam, and a central-difference
// gradient oracle used by the test suites.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "anneal/error.hpp"

namespace anneal::nn {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

enum class Activation { relu, sigmoid, identity };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "identity") return Activation::identity;
  throw Error("unknown activation '" + s + "'");
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double activate(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0 ? z : 0.0;
    case Activation::sigmoid: return sigmoid(z);
    case Activation::identity: return z;
  }
  return z;
}

// Derivative expressed through the pre-activation and the cached output.
// relu'(0) = 0.
inline double activate_derivative(Activation a, double pre, double post) {
  switch (a) {
    case Activation::relu: return pre > 0 ? 1.0 : 0.0;
    case Activation::sigmoid: return post * (1.0 - post);
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::identity;

  std::size_t in_dim() const noexcept { return weights.cols(); }
  std::size_t out_dim() const noexcept { return weights.rows(); }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Glorot-uniform weights, zero bias.
template <class Rng>
DenseLayer make_dense(std::size_t in, std::size_t out, Activation act, Rng& rng) {
  DenseLayer layer{Matrix(out, in), Vector(out, 0.0), act};
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& w : layer.weights.data()) w = dist(rng);
  return layer;
}

struct LayerSpec {
  std::size_t out;
  Activation activation;
};

struct Mlp {
  std::vector<DenseLayer> layers;

  template <class Rng>
  static Mlp make(std::size_t in, std::span<const LayerSpec> specs, Rng& rng) {
    Mlp mlp;
    std::size_t prev = in;
    for (const auto& s : specs) {
      mlp.layers.push_back(make_dense(prev, s.out, s.activation, rng));
      prev = s.out;
    }
    mlp.validate();
    return mlp;
  }

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  void validate() const {
    if (layers.empty()) throw DimensionError("mlp has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.size() != l.out_dim())
        throw DimensionError("bias length " + std::to_string(l.bias.size()) +
                                 " != output dim " + std::to_string(l.out_dim()),
                             i);
      if (i > 0 && layers[i - 1].out_dim() != l.in_dim())
        throw DimensionError("input dim " + std::to_string(l.in_dim()) +
                                 " does not chain from previous output dim " +
                                 std::to_string(layers[i - 1].out_dim()),
                             i);
    }
  }

  /// Parameter blocks in a fixed order: weights then bias, per layer.
  std::vector<std::span<double>> parameter_blocks() {
    std::vector<std::span<double>> out;
    for (auto& l : layers) {
      out.emplace_back(l.weights.data());
      out.emplace_back(l.bias);
    }
    return out;
  }

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

struct LayerTape {
  Vector input;
  Vector pre;
  Vector post;
};

using Tape = std::vector<LayerTape>;

struct ForwardResult {
  Vector output;
  Tape tape;
};

inline void dense_apply(const DenseLayer& l, std::span<const double> x, Vector& pre,
                        Vector& post) {
  const std::size_t out = l.out_dim();
  const std::size_t in = l.in_dim();
  pre.resize(out);
  post.resize(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double* w = l.weights.data().data() + o * in;
    double acc = l.bias[o];
    for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
    pre[o] = acc;
    post[o] = activate(l.activation, acc);
  }
}

inline ForwardResult forward(const Mlp& mlp, std::span<const double> input) {
  ForwardResult res;
  res.tape.resize(mlp.layers.size());
  std::span<const double> x = input;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const auto& l = mlp.layers[i];
    if (x.size() != l.in_dim())
      throw DimensionError("expected input of dim " + std::to_string(l.in_dim()) +
                               ", got " + std::to_string(x.size()),
                           i);
    auto& t = res.tape[i];
    t.input.assign(x.begin(), x.end());
    dense_apply(l, x, t.pre, t.post);
    x = t.post;
  }
  if (!mlp.layers.empty()) res.output = res.tape.back().post;
  return res;
}

/// Forward pass without recording a tape.
inline Vector predict(const Mlp& mlp, std::span<const double> input) {
  Vector cur(input.begin(), input.end()), pre, post;
  for (std::size_t i = 0; i < mlp.layers.size(); ++i) {
    const auto& l = mlp.layers[i];
    if (cur.size() != l.in_dim())
      throw DimensionError("expected input of dim " + std::to_string(l.in_dim()) +
                               ", got " + std::to_string(cur.size()),
                           i);
    dense_apply(l, cur, pre, post);
    cur.swap(post);
  }
  return cur;
}

struct LayerGradients {
  Matrix weights;
  Vector bias;
};

struct MlpGradients {
  std::vector<LayerGradients> layers;

  static MlpGradients zeros_like(const Mlp& mlp) {
    MlpGradients g;
    for (const auto& l : mlp.layers)
      g.layers.push_back({Matrix(l.out_dim(), l.in_dim()), Vector(l.out_dim(), 0.0)});
    return g;
  }

  void set_zero() {
    for (auto& l : layers) {
      std::fill(l.weights.data().begin(), l.weights.data().end(), 0.0);
      std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
  }

  std::vector<std::span<const double>> blocks() const {
    std::vector<std::span<const double>> out;
    for (const auto& l : layers) {
      out.emplace_back(l.weights.data());
      out.emplace_back(l.bias);
    }
    return out;
  }
};

/// Backpropagates `output_gradient` through the taped pass, adding
/// `scale` times the parameter gradients into `accum`. Returns dL/dinput.
inline Vector backward_accumulate(const Mlp& mlp, const Tape& tape,
                                  std::span<const double> output_gradient,
                                  MlpGradients& accum, double scale = 1.0) {
  if (tape.size() != mlp.layers.size())
    throw DimensionError("tape has " + std::to_string(tape.size()) + " layers, mlp has " +
                         std::to_string(mlp.layers.size()));
  if (accum.layers.size() != mlp.layers.size())
    throw DimensionError("gradient accumulator does not match mlp");
  Vector upstream(output_gradient.begin(), output_gradient.end());
  Vector delta, down;
  for (std::size_t li = mlp.layers.size(); li-- > 0;) {
    const auto& l = mlp.layers[li];
    const auto& t = tape[li];
    const std::size_t out = l.out_dim();
    const std::size_t in = l.in_dim();
    if (upstream.size() != out || t.pre.size() != out || t.input.size() != in)
      throw DimensionError("tape/gradient shape mismatch", li);
    auto& g = accum.layers[li];
    if (g.weights.rows() != out || g.weights.cols() != in || g.bias.size() != out)
      throw DimensionError("gradient accumulator shape mismatch", li);
    delta.resize(out);
    for (std::size_t o = 0; o < out; ++o)
      delta[o] = upstream[o] * activate_derivative(l.activation, t.pre[o], t.post[o]);
    down.assign(in, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* w = l.weights.data().data() + o * in;
      double* gw = g.weights.data().data() + o * in;
      const double sd = scale * d;
      for (std::size_t i = 0; i < in; ++i) {
        gw[i] += sd * t.input[i];
        down[i] += d * w[i];
      }
      g.bias[o] += sd;
    }
    upstream.swap(down);
  }
  return upstream;
}

struct BackwardResult {
  Vector input_gradient;
  MlpGradients parameter_gradients;
};

inline BackwardResult backward(const Mlp& mlp, const Tape& tape,
                               std::span<const double> output_gradient) {
  BackwardResult r{{}, MlpGradients::zeros_like(mlp)};
  r.input_gradient = backward_accumulate(mlp, tape, output_gradient, r.parameter_gradients);
  return r;
}

// --- Adam -----------------------------------------------------------------

struct AdamState {
  std::size_t step = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Vector first_moment;
  Vector second_moment;

  static AdamState for_size(std::size_t n, double lr) {
    AdamState s;
    s.learning_rate = lr;
    s.first_moment.assign(n, 0.0);
    s.second_moment.assign(n, 0.0);
    return s;
  }

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline std::size_t total_size(std::span<const std::span<double>> blocks) {
  std::size_t n = 0;
  for (auto b : blocks) n += b.size();
  return n;
}

/// One bias-corrected Adam update over parameter blocks, in block order.
inline void adam_step(std::span<const std::span<double>> params,
                      std::span<const std::span<const double>> grads, AdamState& state) {
  if (params.size() != grads.size())
    throw DimensionError("adam: " + std::to_string(params.size()) + " parameter blocks vs " +
                         std::to_string(grads.size()) + " gradient blocks");
  const std::size_t n = total_size(params);
  if (state.first_moment.size() != n || state.second_moment.size() != n)
    throw DimensionError("adam: state holds " + std::to_string(state.first_moment.size()) +
                         " accumulators for " + std::to_string(n) + " parameters");
  if (!(state.beta1 > 0 && state.beta1 < 1 && state.beta2 > 0 && state.beta2 < 1))
    throw Error("adam: betas must lie in (0, 1)");
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  std::size_t k = 0;
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size())
      throw DimensionError("adam: block " + std::to_string(b) + " shape mismatch");
    for (std::size_t i = 0; i < params[b].size(); ++i, ++k) {
      const double g = grads[b][i];
      double& m = state.first_moment[k];
      double& v = state.second_moment[k];
      m = state.beta1 * m + (1.0 - state.beta1) * g;
      v = state.beta2 * v + (1.0 - state.beta2) * g * g;
      const double mhat = m / c1;
      const double vhat = v / c2;
      params[b][i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

// --- similarity -----------------------------------------------------------

struct Cosine {
  double value = 0.0;
  bool zero_norm = false;
};

inline Cosine cosine_similarity_checked(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionError("cosine: dims " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  const double s = dot / (std::sqrt(na) * std::sqrt(nb));
  return {std::clamp(s, -1.0, 1.0), false};
}

/// a.b / (|a||b|), clamped to [-1, 1]; 0 when either vector has zero norm.
inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  return cosine_similarity_checked(a, b).value;
}

/// Gradients of the cosine similarity with respect to both arguments.
/// Zero when either norm vanishes.
inline void cosine_similarity_gradient(std::span<const double> a, std::span<const double> b,
                                       Vector& grad_a, Vector& grad_b) {
  const std::size_t n = a.size();
  grad_a.assign(n, 0.0);
  grad_b.assign(n, 0.0);
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return;
  const double la = std::sqrt(na), lb = std::sqrt(nb);
  const double s = dot / (la * lb);
  for (std::size_t i = 0; i < n; ++i) {
    grad_a[i] = b[i] / (la * lb) - s * a[i] / na;
    grad_b[i] = a[i] / (la * lb) - s * b[i] / nb;
  }
}

// --- flat parameter views and finite differences ---------------------------

inline Vector flatten(std::span<const std::span<double>> blocks) {
  Vector flat;
  flat.reserve(total_size(blocks));
  for (auto b : blocks) flat.insert(flat.end(), b.begin(), b.end());
  return flat;
}

inline Vector flatten(std::span<const std::span<const double>> blocks) {
  Vector flat;
  for (auto b : blocks) flat.insert(flat.end(), b.begin(), b.end());
  return flat;
}

inline void assign(std::span<const std::span<double>> blocks, std::span<const double> flat) {
  if (flat.size() != total_size(blocks))
    throw DimensionError("flat parameter vector has wrong length");
  std::size_t k = 0;
  for (auto b : blocks)
    for (double& x : b) x = flat[k++];
}

using LossFn = std::function<double(std::span<const double>)>;

/// Central differences (L(p + h e_i) - L(p - h e_i)) / 2h per coordinate.
inline Vector finite_diff_gradient(const LossFn& loss, std::span<const double> params,
                                   double step) {
  Vector p(params.begin(), params.end());
  Vector grad(p.size(), 0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + step;
    const double up = loss(p);
    p[i] = orig - step;
    const double down = loss(p);
    p[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("finite difference: non-finite loss at coordinate " +
                         std::to_string(i));
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace anneal::nn
