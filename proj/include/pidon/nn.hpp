#pragma once

// Dense network building blocks: plain MLP, gated ("modified") MLP, random
// Fourier feature embeddings, Glorot-normal initialization and Adam with an
// exponentially decaying learning rate.
//
// Forward passes come in two families:
//   * a generic template over the scalar type (double, Dual1/Dual2 on double)
//     used for evaluation and derivative oracles, and
//   * tape-variable overloads that keep dual coefficients in structure-of-
//     arrays form so affine layers record fused inner-product nodes.

#include <algorithm>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pidon/autodiff.hpp"

namespace pidon::nn {

using ad::Dual1;
using ad::Dual2;
using ad::Tape;
using ad::Var;

enum class Activation { Tanh, Relu, Elu };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Elu: return "elu";
  }
  return "tanh";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "elu") return Activation::Elu;
  throw std::invalid_argument("unknown activation: " + s);
}

template <class S>
S activate(Activation a, const S& x) {
  using ad::elu;
  using ad::relu;
  using ad::tanh;
  using std::tanh;
  switch (a) {
    case Activation::Tanh: return tanh(x);
    case Activation::Relu: return relu(x);
    case Activation::Elu: return elu(x);
  }
  return tanh(x);
}

// ---- Plain MLP ---------------------------------------------------------------

struct MlpArch {
  int input = 1;
  int width = 1;
  int hidden_layers = 1;  // number of activated hidden layers
  int output = 1;
  Activation act = Activation::Tanh;
};

// (in, out) of each affine layer, in order.
inline std::vector<std::pair<int, int>> layer_dims(const MlpArch& a) {
  std::vector<std::pair<int, int>> dims;
  if (a.hidden_layers == 0) {
    dims.emplace_back(a.input, a.output);
    return dims;
  }
  dims.emplace_back(a.input, a.width);
  for (int l = 1; l < a.hidden_layers; ++l) dims.emplace_back(a.width, a.width);
  dims.emplace_back(a.width, a.output);
  return dims;
}

inline size_t param_count(const MlpArch& a) {
  size_t n = 0;
  for (auto [in, out] : layer_dims(a)) n += static_cast<size_t>(out) * in + out;
  return n;
}

// Weights ~ N(0, 2/(fan_in+fan_out)), biases zero.
inline void glorot_normal_init(int fan_in, int fan_out, std::span<double> w, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (fan_in + fan_out)));
  for (double& x : w) x = dist(rng);
}

inline std::vector<double> init_params(const MlpArch& a, std::mt19937_64& rng) {
  std::vector<double> p(param_count(a), 0.0);
  size_t off = 0;
  for (auto [in, out] : layer_dims(a)) {
    glorot_normal_init(in, out, std::span<double>(p).subspan(off, static_cast<size_t>(out) * in), rng);
    off += static_cast<size_t>(out) * in + out;  // biases stay zero
  }
  return p;
}

// Generic scalar path. X must support arithmetic with double and the
// activation primitives.
template <class X>
std::vector<X> mlp_forward(const MlpArch& a, std::span<const double> params, std::span<const X> x) {
  if (static_cast<int>(x.size()) != a.input) throw std::invalid_argument("mlp_forward: input size mismatch");
  if (params.size() != param_count(a)) throw std::invalid_argument("mlp_forward: parameter count mismatch");
  std::vector<X> cur(x.begin(), x.end());
  auto dims = layer_dims(a);
  size_t off = 0;
  for (size_t l = 0; l < dims.size(); ++l) {
    auto [in, out] = dims[l];
    std::vector<X> next(static_cast<size_t>(out));
    for (int j = 0; j < out; ++j) {
      X acc = params[off + static_cast<size_t>(out) * in + j] + 0.0 * cur[0];  // bias, promoted
      for (int i = 0; i < in; ++i) acc = acc + params[off + static_cast<size_t>(j) * in + i] * cur[static_cast<size_t>(i)];
      next[static_cast<size_t>(j)] = (l + 1 < dims.size()) ? activate(a.act, acc) : acc;
    }
    cur = std::move(next);
    off += static_cast<size_t>(out) * in + out;
  }
  return cur;
}

inline std::vector<double> mlp_forward(const MlpArch& a, std::span<const double> params,
                                       std::span<const double> x) {
  return mlp_forward<double>(a, params, x);
}

// Structure-of-arrays duals over tape variables.
template <class T>
struct Dual1Vec {
  std::vector<T> v, d;
};
template <class T>
struct Dual2Vec {
  std::vector<T> v, d1, d2;
};

namespace detail {

inline std::span<const Var> row(std::span<const Var> p, size_t off, int in, int j) {
  return p.subspan(off + static_cast<size_t>(j) * in, static_cast<size_t>(in));
}

// One affine layer for each supported input form.
inline std::vector<Var> affine_layer(std::span<const Var> p, size_t off, int in, int out,
                                     std::span<const double> x) {
  std::vector<Var> y(static_cast<size_t>(out));
  for (int j = 0; j < out; ++j)
    y[static_cast<size_t>(j)] = ad::affine(row(p, off, in, j), x, p[off + static_cast<size_t>(out) * in + j]);
  return y;
}

inline std::vector<Var> affine_layer(std::span<const Var> p, size_t off, int in, int out,
                                     std::span<const Var> x) {
  std::vector<Var> y(static_cast<size_t>(out));
  for (int j = 0; j < out; ++j)
    y[static_cast<size_t>(j)] = ad::affine(row(p, off, in, j), x, p[off + static_cast<size_t>(out) * in + j]);
  return y;
}

inline Dual1Vec<Var> affine_layer(std::span<const Var> p, size_t off, int in, int out,
                                  const Dual1Vec<double>& x) {
  Dual1Vec<Var> y;
  y.v.resize(static_cast<size_t>(out));
  y.d.resize(static_cast<size_t>(out));
  for (int j = 0; j < out; ++j) {
    auto w = row(p, off, in, j);
    y.v[static_cast<size_t>(j)] = ad::affine(w, std::span<const double>(x.v), p[off + static_cast<size_t>(out) * in + j]);
    y.d[static_cast<size_t>(j)] = ad::dot(w, std::span<const double>(x.d));
  }
  return y;
}

inline Dual1Vec<Var> affine_layer(std::span<const Var> p, size_t off, int in, int out,
                                  const Dual1Vec<Var>& x) {
  Dual1Vec<Var> y;
  y.v.resize(static_cast<size_t>(out));
  y.d.resize(static_cast<size_t>(out));
  for (int j = 0; j < out; ++j) {
    auto w = row(p, off, in, j);
    y.v[static_cast<size_t>(j)] = ad::affine(w, std::span<const Var>(x.v), p[off + static_cast<size_t>(out) * in + j]);
    y.d[static_cast<size_t>(j)] = ad::dot(w, std::span<const Var>(x.d));
  }
  return y;
}

inline Dual2Vec<Var> affine_layer(std::span<const Var> p, size_t off, int in, int out,
                                  const Dual2Vec<double>& x) {
  Dual2Vec<Var> y;
  y.v.resize(static_cast<size_t>(out));
  y.d1.resize(static_cast<size_t>(out));
  y.d2.resize(static_cast<size_t>(out));
  for (int j = 0; j < out; ++j) {
    auto w = row(p, off, in, j);
    y.v[static_cast<size_t>(j)] = ad::affine(w, std::span<const double>(x.v), p[off + static_cast<size_t>(out) * in + j]);
    y.d1[static_cast<size_t>(j)] = ad::dot(w, std::span<const double>(x.d1));
    y.d2[static_cast<size_t>(j)] = ad::dot(w, std::span<const double>(x.d2));
  }
  return y;
}

inline Dual2Vec<Var> affine_layer(std::span<const Var> p, size_t off, int in, int out,
                                  const Dual2Vec<Var>& x) {
  Dual2Vec<Var> y;
  y.v.resize(static_cast<size_t>(out));
  y.d1.resize(static_cast<size_t>(out));
  y.d2.resize(static_cast<size_t>(out));
  for (int j = 0; j < out; ++j) {
    auto w = row(p, off, in, j);
    y.v[static_cast<size_t>(j)] = ad::affine(w, std::span<const Var>(x.v), p[off + static_cast<size_t>(out) * in + j]);
    y.d1[static_cast<size_t>(j)] = ad::dot(w, std::span<const Var>(x.d1));
    y.d2[static_cast<size_t>(j)] = ad::dot(w, std::span<const Var>(x.d2));
  }
  return y;
}

inline void activate_inplace(Activation a, std::vector<Var>& x) {
  for (Var& e : x) e = activate(a, e);
}
inline void activate_inplace(Activation a, Dual1Vec<Var>& x) {
  for (size_t i = 0; i < x.v.size(); ++i) {
    Dual1<Var> e = activate(a, Dual1<Var>{x.v[i], x.d[i]});
    x.v[i] = e.v;
    x.d[i] = e.d;
  }
}
inline void activate_inplace(Activation a, Dual2Vec<Var>& x) {
  for (size_t i = 0; i < x.v.size(); ++i) {
    Dual2<Var> e = activate(a, Dual2<Var>{x.v[i], x.d1[i], x.d2[i]});
    x.v[i] = e.v;
    x.d1[i] = e.d1;
    x.d2[i] = e.d2;
  }
}

template <class VarVec, class Input>
VarVec mlp_forward_taped(const MlpArch& a, std::span<const Var> params, const Input& x) {
  auto dims = layer_dims(a);
  size_t off = 0;
  auto [in0, out0] = dims[0];
  VarVec cur = affine_layer(params, off, in0, out0, x);
  off += static_cast<size_t>(out0) * in0 + out0;
  if (dims.size() > 1) activate_inplace(a.act, cur);
  for (size_t l = 1; l < dims.size(); ++l) {
    auto [in, out] = dims[l];
    cur = affine_layer(params, off, in, out, cur);
    off += static_cast<size_t>(out) * in + out;
    if (l + 1 < dims.size()) activate_inplace(a.act, cur);
  }
  return cur;
}

}  // namespace detail

inline std::vector<Var> mlp_forward(const MlpArch& a, std::span<const Var> params,
                                    std::span<const double> x) {
  if (static_cast<int>(x.size()) != a.input) throw std::invalid_argument("mlp_forward: input size mismatch");
  return detail::mlp_forward_taped<std::vector<Var>>(a, params, x);
}
inline Dual1Vec<Var> mlp_forward(const MlpArch& a, std::span<const Var> params, const Dual1Vec<double>& x) {
  return detail::mlp_forward_taped<Dual1Vec<Var>>(a, params, x);
}
inline Dual2Vec<Var> mlp_forward(const MlpArch& a, std::span<const Var> params, const Dual2Vec<double>& x) {
  return detail::mlp_forward_taped<Dual2Vec<Var>>(a, params, x);
}

// ---- Modified (gated) MLP ------------------------------------------------------

// Two encoder streams U, V gate every hidden state:
//   U = act(W1 x + b1), V = act(W2 x + b2), H = act(Wz0 x + bz0)
//   Z_k = act(Wzk H + bzk),  H <- U + Z_k (V - U),  k = 1..L
//   out = W H + b
// All hidden widths must match for the elementwise gating. The first hidden
// map takes the raw input to the hidden width; the L gate maps are square.
struct ModifiedMlpArch {
  int input = 1;
  int width = 1;
  int hidden_layers = 1;  // L, number of gate layers
  int output = 1;
  Activation act = Activation::Tanh;
};

inline std::vector<std::pair<int, int>> layer_dims(const ModifiedMlpArch& a) {
  std::vector<std::pair<int, int>> dims;
  dims.emplace_back(a.input, a.width);  // u gate
  dims.emplace_back(a.input, a.width);  // v gate
  dims.emplace_back(a.input, a.width);  // H^(1)
  for (int l = 0; l < a.hidden_layers; ++l) dims.emplace_back(a.width, a.width);
  dims.emplace_back(a.width, a.output);  // head
  return dims;
}

inline size_t param_count(const ModifiedMlpArch& a) {
  size_t n = 0;
  for (auto [in, out] : layer_dims(a)) n += static_cast<size_t>(out) * in + out;
  return n;
}

inline std::vector<double> init_params(const ModifiedMlpArch& a, std::mt19937_64& rng) {
  std::vector<double> p(param_count(a), 0.0);
  size_t off = 0;
  for (auto [in, out] : layer_dims(a)) {
    glorot_normal_init(in, out, std::span<double>(p).subspan(off, static_cast<size_t>(out) * in), rng);
    off += static_cast<size_t>(out) * in + out;
  }
  return p;
}

template <class X>
std::vector<X> modified_mlp_forward(const ModifiedMlpArch& a, std::span<const double> params,
                                    std::span<const X> x) {
  if (static_cast<int>(x.size()) != a.input)
    throw std::invalid_argument("modified_mlp_forward: input size mismatch");
  if (params.size() != param_count(a))
    throw std::invalid_argument("modified_mlp_forward: parameter count mismatch");
  auto dims = layer_dims(a);
  size_t off = 0;
  auto affine = [&](int in, int out, std::span<const X> v) {
    std::vector<X> y(static_cast<size_t>(out));
    for (int j = 0; j < out; ++j) {
      X acc = params[off + static_cast<size_t>(out) * in + j] + 0.0 * v[0];
      for (int i = 0; i < in; ++i) acc = acc + params[off + static_cast<size_t>(j) * in + i] * v[static_cast<size_t>(i)];
      y[static_cast<size_t>(j)] = acc;
    }
    off += static_cast<size_t>(out) * in + out;
    return y;
  };
  auto act_all = [&](std::vector<X>& v) {
    for (X& e : v) e = activate(a.act, e);
  };
  std::vector<X> u = affine(a.input, a.width, x);
  act_all(u);
  std::vector<X> v = affine(a.input, a.width, x);
  act_all(v);
  std::vector<X> h = affine(a.input, a.width, x);
  act_all(h);
  for (int l = 0; l < a.hidden_layers; ++l) {
    std::vector<X> z = affine(a.width, a.width, h);
    act_all(z);
    for (int i = 0; i < a.width; ++i)
      h[static_cast<size_t>(i)] = u[static_cast<size_t>(i)] + z[static_cast<size_t>(i)] * (v[static_cast<size_t>(i)] - u[static_cast<size_t>(i)]);
  }
  return affine(a.width, a.output, h);
}

inline std::vector<double> modified_mlp_forward(const ModifiedMlpArch& a, std::span<const double> params,
                                                std::span<const double> x) {
  return modified_mlp_forward<double>(a, params, x);
}

namespace detail {

inline Dual1<Var> at(const Dual1Vec<Var>& x, size_t i) { return {x.v[i], x.d[i]}; }
inline Dual2<Var> at(const Dual2Vec<Var>& x, size_t i) { return {x.v[i], x.d1[i], x.d2[i]}; }
inline Var at(const std::vector<Var>& x, size_t i) { return x[i]; }
inline void put(Dual1Vec<Var>& x, size_t i, const Dual1<Var>& e) { x.v[i] = e.v; x.d[i] = e.d; }
inline void put(Dual2Vec<Var>& x, size_t i, const Dual2<Var>& e) { x.v[i] = e.v; x.d1[i] = e.d1; x.d2[i] = e.d2; }
inline void put(std::vector<Var>& x, size_t i, const Var& e) { x[i] = e; }

template <class VarVec, class Input>
VarVec modified_mlp_forward_taped(const ModifiedMlpArch& a, std::span<const Var> params, const Input& x) {
  size_t off = 0;
  auto next = [&](int in, int out, const auto& v) {
    auto y = affine_layer(params, off, in, out, v);
    off += static_cast<size_t>(out) * in + out;
    return y;
  };
  VarVec u = next(a.input, a.width, x);
  activate_inplace(a.act, u);
  VarVec v = next(a.input, a.width, x);
  activate_inplace(a.act, v);
  VarVec h = next(a.input, a.width, x);
  activate_inplace(a.act, h);
  for (int l = 0; l < a.hidden_layers; ++l) {
    VarVec z = next(a.width, a.width, h);
    activate_inplace(a.act, z);
    for (int i = 0; i < a.width; ++i) {
      auto ui = at(u, static_cast<size_t>(i));
      auto zi = at(z, static_cast<size_t>(i));
      auto vi = at(v, static_cast<size_t>(i));
      put(h, static_cast<size_t>(i), ui + zi * (vi - ui));
    }
  }
  return next(a.width, a.output, h);
}

}  // namespace detail

inline std::vector<Var> modified_mlp_forward(const ModifiedMlpArch& a, std::span<const Var> params,
                                             std::span<const double> x) {
  return detail::modified_mlp_forward_taped<std::vector<Var>>(a, params, x);
}
inline Dual1Vec<Var> modified_mlp_forward(const ModifiedMlpArch& a, std::span<const Var> params,
                                          const Dual1Vec<double>& x) {
  return detail::modified_mlp_forward_taped<Dual1Vec<Var>>(a, params, x);
}
inline Dual2Vec<Var> modified_mlp_forward(const ModifiedMlpArch& a, std::span<const Var> params,
                                          const Dual2Vec<double>& x) {
  return detail::modified_mlp_forward_taped<Dual2Vec<Var>>(a, params, x);
}

// ---- Random Fourier features -----------------------------------------------------

// gamma(v) = [cos(Bv); sin(Bv)] with B_ij ~ N(0, sigma^2), frozen at construction.
struct FourierFeatureMap {
  int mf = 0;     // rows of B
  int d = 0;      // input dimension
  double sigma = 1.0;
  std::vector<double> B;  // row-major mf x d
};

inline FourierFeatureMap make_fourier_map(int mf, int d, double sigma, std::mt19937_64& rng) {
  FourierFeatureMap m{mf, d, sigma, std::vector<double>(static_cast<size_t>(mf) * d)};
  std::normal_distribution<double> dist(0.0, sigma);
  for (double& b : m.B) b = dist(rng);
  return m;
}

template <class X>
std::vector<X> fourier_embed(const FourierFeatureMap& m, std::span<const X> v) {
  using ad::cos;
  using ad::sin;
  using std::cos;
  using std::sin;
  if (static_cast<int>(v.size()) != m.d) throw std::invalid_argument("fourier_embed: dimension mismatch");
  std::vector<X> out(2 * static_cast<size_t>(m.mf));
  for (int i = 0; i < m.mf; ++i) {
    X acc = m.B[static_cast<size_t>(i) * m.d] * v[0];
    for (int j = 1; j < m.d; ++j) acc = acc + m.B[static_cast<size_t>(i) * m.d + j] * v[static_cast<size_t>(j)];
    out[static_cast<size_t>(i)] = cos(acc);
    out[static_cast<size_t>(m.mf + i)] = sin(acc);
  }
  return out;
}

inline std::vector<double> fourier_embed(const FourierFeatureMap& m, std::span<const double> v) {
  return fourier_embed<double>(m, v);
}

// ---- Adam with exponential learning-rate decay -------------------------------------

struct AdamState {
  std::vector<double> m, v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double base_lr = 1e-3;
};

inline AdamState make_adam(size_t nparams, double base_lr) {
  AdamState s;
  s.m.assign(nparams, 0.0);
  s.v.assign(nparams, 0.0);
  s.base_lr = base_lr;
  return s;
}

// Continuous exponent: lr = base * 0.9^(iter/1000).
inline double lr_schedule(double base_lr, long iter) {
  return base_lr * std::pow(0.9, static_cast<double>(iter) / 1000.0);
}

inline std::vector<double> adam_step(AdamState& s, std::span<const double> params,
                                     std::span<const double> grads, long iter) {
  if (params.size() != grads.size() || params.size() != s.m.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  for (size_t i = 0; i < grads.size(); ++i)
    if (!std::isfinite(grads[i]))
      throw std::runtime_error("adam_step: non-finite gradient for parameter " + std::to_string(i));
  s.step += 1;
  const double lr = lr_schedule(s.base_lr, iter);
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
  std::vector<double> out(params.begin(), params.end());
  for (size_t i = 0; i < params.size(); ++i) {
    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grads[i];
    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
    out[i] -= lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + s.eps);
  }
  return out;
}

// ---- Named-array archive (checkpoint container) --------------------------------------

struct NamedArray {
  std::string name;
  std::vector<size_t> shape;
  std::vector<double> data;  // row-major
};

// Flat binary archive: magic, JSON metadata header, then named f64 arrays
// (little-endian). Defined in nn.cpp.
void save_archive(const std::string& path, const std::string& meta_json,
                  std::span<const NamedArray> arrays);
std::pair<std::string, std::vector<NamedArray>> load_archive(const std::string& path);

}  // namespace pidon::nn
