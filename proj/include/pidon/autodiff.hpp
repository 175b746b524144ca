#pragma once

// Reverse-mode tape with forward-mode dual numbers layered on top.
//
// The tape records scalar primitives with precomputed local partials.
// Dual1/Dual2 carry first/second directional derivatives; instantiating
// them over Var makes every dual coefficient a tape variable, so a single
// reverse sweep yields parameter gradients of expressions that contain
// input-coordinate derivatives (forward-over-reverse).

#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace pidon::ad {

class Tape {
 public:
  struct Edge {
    int32_t parent;
    double weight;
  };

  Tape() { reserve(1 << 16); }

  void reserve(size_t nodes) {
    vals_.reserve(nodes);
    ends_.reserve(nodes);
    edges_.reserve(nodes * 2);
  }

  int32_t leaf(double value) {
    vals_.push_back(value);
    ends_.push_back(static_cast<uint32_t>(edges_.size()));
    return static_cast<int32_t>(vals_.size()) - 1;
  }

  // Fused-node protocol: push any number of edges, then seal with the value.
  void push_edge(int32_t parent, double weight) { edges_.push_back({parent, weight}); }

  int32_t seal(double value) {
    vals_.push_back(value);
    ends_.push_back(static_cast<uint32_t>(edges_.size()));
    return static_cast<int32_t>(vals_.size()) - 1;
  }

  int32_t node1(double value, int32_t p, double w) {
    edges_.push_back({p, w});
    return seal(value);
  }

  int32_t node2(double value, int32_t p0, double w0, int32_t p1, double w1) {
    edges_.push_back({p0, w0});
    edges_.push_back({p1, w1});
    return seal(value);
  }

  double value(int32_t i) const { return vals_[static_cast<size_t>(i)]; }
  size_t num_nodes() const { return vals_.size(); }
  size_t num_edges() const { return edges_.size(); }

  void clear() {
    vals_.clear();
    ends_.clear();
    edges_.clear();
  }

  // Adjoints of every node with respect to `output`.
  std::vector<double> reverse(int32_t output) const {
    std::vector<double> adj(vals_.size(), 0.0);
    reverse_into(output, adj);
    return adj;
  }

  void reverse_into(int32_t output, std::span<double> adj) const {
    assert(adj.size() == vals_.size());
    adj[static_cast<size_t>(output)] = 1.0;
    for (int32_t i = output; i >= 0; --i) {
      const double a = adj[static_cast<size_t>(i)];
      if (a == 0.0) continue;
      const uint32_t begin = (i == 0) ? 0u : ends_[static_cast<size_t>(i) - 1];
      const uint32_t end = ends_[static_cast<size_t>(i)];
      for (uint32_t e = begin; e != end; ++e)
        adj[static_cast<size_t>(edges_[e].parent)] += edges_[e].weight * a;
    }
  }

  // Index of the first non-finite value on the tape, or -1.
  int32_t first_nonfinite() const {
    for (size_t i = 0; i < vals_.size(); ++i)
      if (!std::isfinite(vals_[i])) return static_cast<int32_t>(i);
    return -1;
  }

 private:
  std::vector<double> vals_;
  std::vector<uint32_t> ends_;  // exclusive edge end per node; begin is previous end
  std::vector<Edge> edges_;
};

struct Var {
  Tape* tape = nullptr;
  int32_t idx = -1;
  double val = 0.0;
};

inline Var make_leaf(Tape& t, double v) { return Var{&t, t.leaf(v), v}; }

inline std::vector<Var> make_leaves(Tape& t, std::span<const double> vs) {
  std::vector<Var> out;
  out.reserve(vs.size());
  for (double v : vs) out.push_back(make_leaf(t, v));
  return out;
}

// ---- Var arithmetic -------------------------------------------------------

inline Var operator+(Var a, Var b) {
  assert(a.tape == b.tape);
  double v = a.val + b.val;
  return Var{a.tape, a.tape->node2(v, a.idx, 1.0, b.idx, 1.0), v};
}
inline Var operator-(Var a, Var b) {
  assert(a.tape == b.tape);
  double v = a.val - b.val;
  return Var{a.tape, a.tape->node2(v, a.idx, 1.0, b.idx, -1.0), v};
}
inline Var operator*(Var a, Var b) {
  assert(a.tape == b.tape);
  double v = a.val * b.val;
  return Var{a.tape, a.tape->node2(v, a.idx, b.val, b.idx, a.val), v};
}
inline Var operator/(Var a, Var b) {
  assert(a.tape == b.tape);
  double v = a.val / b.val;
  return Var{a.tape, a.tape->node2(v, a.idx, 1.0 / b.val, b.idx, -v / b.val), v};
}

inline Var operator+(Var a, double c) { return Var{a.tape, a.tape->node1(a.val + c, a.idx, 1.0), a.val + c}; }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a + (-c); }
inline Var operator-(double c, Var a) { return Var{a.tape, a.tape->node1(c - a.val, a.idx, -1.0), c - a.val}; }
inline Var operator*(Var a, double c) { return Var{a.tape, a.tape->node1(a.val * c, a.idx, c), a.val * c}; }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return a * (1.0 / c); }
inline Var operator/(double c, Var a) {
  double v = c / a.val;
  return Var{a.tape, a.tape->node1(v, a.idx, -v / a.val), v};
}
inline Var operator-(Var a) { return a * -1.0; }

inline Var tanh(Var a) {
  double th = std::tanh(a.val);
  return Var{a.tape, a.tape->node1(th, a.idx, 1.0 - th * th), th};
}
inline Var exp(Var a) {
  double e = std::exp(a.val);
  return Var{a.tape, a.tape->node1(e, a.idx, e), e};
}
inline Var sin(Var a) { return Var{a.tape, a.tape->node1(std::sin(a.val), a.idx, std::cos(a.val)), std::sin(a.val)}; }
inline Var cos(Var a) { return Var{a.tape, a.tape->node1(std::cos(a.val), a.idx, -std::sin(a.val)), std::cos(a.val)}; }
inline Var sqrt(Var a) {
  double r = std::sqrt(a.val);
  return Var{a.tape, a.tape->node1(r, a.idx, 0.5 / r), r};
}
inline Var pow(Var a, double p) {
  double v = std::pow(a.val, p);
  return Var{a.tape, a.tape->node1(v, a.idx, p * std::pow(a.val, p - 1.0)), v};
}
inline Var elu(Var a) {
  if (a.val > 0.0) return Var{a.tape, a.tape->node1(a.val, a.idx, 1.0), a.val};
  double e = std::exp(a.val);
  return Var{a.tape, a.tape->node1(e - 1.0, a.idx, e), e - 1.0};
}
inline Var relu(Var a) {
  double v = a.val > 0.0 ? a.val : 0.0;
  return Var{a.tape, a.tape->node1(v, a.idx, a.val > 0.0 ? 1.0 : 0.0), v};
}
inline Var square(Var a) {
  double v = a.val * a.val;
  return Var{a.tape, a.tape->node1(v, a.idx, 2.0 * a.val), v};
}

// ---- Fused multi-edge primitives (the hot path) ----------------------------

inline Var dot(std::span<const Var> a, std::span<const Var> b) {
  assert(a.size() == b.size() && !a.empty());
  Tape& t = *a[0].tape;
  double v = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    v += a[i].val * b[i].val;
    t.push_edge(a[i].idx, b[i].val);
    t.push_edge(b[i].idx, a[i].val);
  }
  return Var{&t, t.seal(v), v};
}

inline Var dot(std::span<const Var> a, std::span<const double> c) {
  assert(a.size() == c.size() && !a.empty());
  Tape& t = *a[0].tape;
  double v = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    v += a[i].val * c[i];
    t.push_edge(a[i].idx, c[i]);
  }
  return Var{&t, t.seal(v), v};
}

inline Var affine(std::span<const Var> w, std::span<const double> x, Var b) {
  Tape& t = *b.tape;
  double v = b.val;
  for (size_t i = 0; i < w.size(); ++i) {
    v += w[i].val * x[i];
    t.push_edge(w[i].idx, x[i]);
  }
  t.push_edge(b.idx, 1.0);
  return Var{&t, t.seal(v), v};
}

inline Var affine(std::span<const Var> w, std::span<const Var> x, Var b) {
  Tape& t = *b.tape;
  double v = b.val;
  for (size_t i = 0; i < w.size(); ++i) {
    v += w[i].val * x[i].val;
    t.push_edge(w[i].idx, x[i].val);
    t.push_edge(x[i].idx, w[i].val);
  }
  t.push_edge(b.idx, 1.0);
  return Var{&t, t.seal(v), v};
}

inline Var sum(std::span<const Var> xs) {
  assert(!xs.empty());
  Tape& t = *xs[0].tape;
  double v = 0.0;
  for (const Var& x : xs) {
    v += x.val;
    t.push_edge(x.idx, 1.0);
  }
  return Var{&t, t.seal(v), v};
}

inline Var sum_squares(std::span<const Var> xs) {
  assert(!xs.empty());
  Tape& t = *xs[0].tape;
  double v = 0.0;
  for (const Var& x : xs) {
    v += x.val * x.val;
    t.push_edge(x.idx, 2.0 * x.val);
  }
  return Var{&t, t.seal(v), v};
}

// ---- First-order duals ------------------------------------------------------

template <class T>
struct Dual1 {
  T v{};
  T d{};
};

template <class T> Dual1<T> operator+(const Dual1<T>& a, const Dual1<T>& b) { return {a.v + b.v, a.d + b.d}; }
template <class T> Dual1<T> operator-(const Dual1<T>& a, const Dual1<T>& b) { return {a.v - b.v, a.d - b.d}; }
template <class T> Dual1<T> operator*(const Dual1<T>& a, const Dual1<T>& b) {
  return {a.v * b.v, a.d * b.v + a.v * b.d};
}
template <class T> Dual1<T> operator/(const Dual1<T>& a, const Dual1<T>& b) {
  T h = a.v / b.v;
  return {h, (a.d - h * b.d) / b.v};
}
template <class T> Dual1<T> operator+(const Dual1<T>& a, double c) { return {a.v + c, a.d}; }
template <class T> Dual1<T> operator+(double c, const Dual1<T>& a) { return {a.v + c, a.d}; }
template <class T> Dual1<T> operator-(const Dual1<T>& a, double c) { return {a.v - c, a.d}; }
template <class T> Dual1<T> operator-(double c, const Dual1<T>& a) { return {c - a.v, -a.d}; }
template <class T> Dual1<T> operator*(const Dual1<T>& a, double c) { return {a.v * c, a.d * c}; }
template <class T> Dual1<T> operator*(double c, const Dual1<T>& a) { return {a.v * c, a.d * c}; }
// Mixed Dual1<T>/T overloads exist for tape variables; for T = double they
// would collide with the plain-double forms above.
template <class T> requires(!std::is_same_v<T, double>)
Dual1<T> operator*(const Dual1<T>& a, const T& c) { return {a.v * c, a.d * c}; }
template <class T> requires(!std::is_same_v<T, double>)
Dual1<T> operator*(const T& c, const Dual1<T>& a) { return {a.v * c, a.d * c}; }
template <class T> requires(!std::is_same_v<T, double>)
Dual1<T> operator+(const Dual1<T>& a, const T& c) { return {a.v + c, a.d}; }
template <class T> requires(!std::is_same_v<T, double>)
Dual1<T> operator-(const Dual1<T>& a, const T& c) { return {a.v - c, a.d}; }
template <class T> Dual1<T> operator-(const Dual1<T>& a) { return {-a.v, -a.d}; }

template <class T> Dual1<T> tanh(const Dual1<T>& x) {
  using std::tanh;
  T th = tanh(x.v);
  return {th, (1.0 - th * th) * x.d};
}
template <class T> Dual1<T> exp(const Dual1<T>& x) {
  using std::exp;
  T e = exp(x.v);
  return {e, e * x.d};
}
template <class T> Dual1<T> sin(const Dual1<T>& x) {
  using std::cos;
  using std::sin;
  return {sin(x.v), cos(x.v) * x.d};
}
template <class T> Dual1<T> cos(const Dual1<T>& x) {
  using std::cos;
  using std::sin;
  return {cos(x.v), -1.0 * sin(x.v) * x.d};
}
template <class T> Dual1<T> sqrt(const Dual1<T>& x) {
  using std::sqrt;
  T r = sqrt(x.v);
  return {r, 0.5 / r * x.d};
}
template <class T> Dual1<T> square(const Dual1<T>& x) { return {x.v * x.v, 2.0 * x.v * x.d}; }

// ---- Second-order duals ------------------------------------------------------

template <class T>
struct Dual2 {
  T v{};
  T d1{};
  T d2{};
};

template <class T> Dual2<T> operator+(const Dual2<T>& a, const Dual2<T>& b) {
  return {a.v + b.v, a.d1 + b.d1, a.d2 + b.d2};
}
template <class T> Dual2<T> operator-(const Dual2<T>& a, const Dual2<T>& b) {
  return {a.v - b.v, a.d1 - b.d1, a.d2 - b.d2};
}
template <class T> Dual2<T> operator*(const Dual2<T>& a, const Dual2<T>& b) {
  return {a.v * b.v, a.d1 * b.v + a.v * b.d1, a.d2 * b.v + 2.0 * (a.d1 * b.d1) + a.v * b.d2};
}
template <class T> Dual2<T> operator/(const Dual2<T>& a, const Dual2<T>& b) {
  T h = a.v / b.v;
  T hd = (a.d1 - h * b.d1) / b.v;
  return {h, hd, (a.d2 - 2.0 * (hd * b.d1) - h * b.d2) / b.v};
}
template <class T> Dual2<T> operator+(const Dual2<T>& a, double c) { return {a.v + c, a.d1, a.d2}; }
template <class T> Dual2<T> operator+(double c, const Dual2<T>& a) { return {a.v + c, a.d1, a.d2}; }
template <class T> Dual2<T> operator-(const Dual2<T>& a, double c) { return {a.v - c, a.d1, a.d2}; }
template <class T> Dual2<T> operator-(double c, const Dual2<T>& a) { return {c - a.v, -a.d1, -a.d2}; }
template <class T> Dual2<T> operator*(const Dual2<T>& a, double c) { return {a.v * c, a.d1 * c, a.d2 * c}; }
template <class T> Dual2<T> operator*(double c, const Dual2<T>& a) { return {a.v * c, a.d1 * c, a.d2 * c}; }
template <class T> requires(!std::is_same_v<T, double>)
Dual2<T> operator*(const Dual2<T>& a, const T& c) { return {a.v * c, a.d1 * c, a.d2 * c}; }
template <class T> requires(!std::is_same_v<T, double>)
Dual2<T> operator*(const T& c, const Dual2<T>& a) { return {a.v * c, a.d1 * c, a.d2 * c}; }
template <class T> requires(!std::is_same_v<T, double>)
Dual2<T> operator+(const Dual2<T>& a, const T& c) { return {a.v + c, a.d1, a.d2}; }
template <class T> requires(!std::is_same_v<T, double>)
Dual2<T> operator-(const Dual2<T>& a, const T& c) { return {a.v - c, a.d1, a.d2}; }
template <class T> Dual2<T> operator-(const Dual2<T>& a) { return {-a.v, -a.d1, -a.d2}; }

template <class T> Dual2<T> tanh(const Dual2<T>& x) {
  using std::tanh;
  T th = tanh(x.v);
  T d = 1.0 - th * th;
  T dd = -2.0 * (th * d);
  return {th, d * x.d1, dd * (x.d1 * x.d1) + d * x.d2};
}
template <class T> Dual2<T> exp(const Dual2<T>& x) {
  using std::exp;
  T e = exp(x.v);
  return {e, e * x.d1, e * (x.d1 * x.d1) + e * x.d2};
}
template <class T> Dual2<T> sin(const Dual2<T>& x) {
  using std::cos;
  using std::sin;
  T s = sin(x.v);
  T c = cos(x.v);
  return {s, c * x.d1, -1.0 * (s * (x.d1 * x.d1)) + c * x.d2};
}
template <class T> Dual2<T> cos(const Dual2<T>& x) {
  using std::cos;
  using std::sin;
  T s = sin(x.v);
  T c = cos(x.v);
  return {c, -1.0 * (s * x.d1), -1.0 * (c * (x.d1 * x.d1)) - s * x.d2};
}
template <class T> Dual2<T> sqrt(const Dual2<T>& x) {
  using std::sqrt;
  T r = sqrt(x.v);
  T d = 0.5 / r;
  T dd = -0.25 / (r * (x.v));
  return {r, d * x.d1, dd * (x.d1 * x.d1) + d * x.d2};
}
template <class T> Dual2<T> square(const Dual2<T>& x) {
  return {x.v * x.v, 2.0 * (x.v * x.d1), 2.0 * (x.d1 * x.d1) + 2.0 * (x.v * x.d2)};
}
template <class T> Dual2<T> elu(const Dual2<T>& x);
template <class T> Dual2<T> relu(const Dual2<T>& x);
template <class T> Dual1<T> elu(const Dual1<T>& x);
template <class T> Dual1<T> relu(const Dual1<T>& x);

namespace detail {
inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.val; }
}  // namespace detail

template <class T> Dual2<T> elu(const Dual2<T>& x) {
  using std::exp;
  if (detail::value_of(x.v) > 0.0) return x;
  T e = exp(x.v);
  return {e - 1.0, e * x.d1, e * (x.d1 * x.d1) + e * x.d2};
}
template <class T> Dual2<T> relu(const Dual2<T>& x) {
  if (detail::value_of(x.v) > 0.0) return x;
  return {0.0 * x.v, 0.0 * x.d1, 0.0 * x.d2};
}
template <class T> Dual1<T> elu(const Dual1<T>& x) {
  using std::exp;
  if (detail::value_of(x.v) > 0.0) return x;
  T e = exp(x.v);
  return {e - 1.0, e * x.d};
}
template <class T> Dual1<T> relu(const Dual1<T>& x) {
  if (detail::value_of(x.v) > 0.0) return x;
  return {0.0 * x.v, 0.0 * x.d};
}

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double square(double x) { return x * x; }

// ---- Spec-level entry points -------------------------------------------------

struct GradientVector {
  // partials[i] is the derivative with respect to parameter i (leaf order).
  std::vector<double> partials;
};

struct NonFiniteError : std::runtime_error {
  int32_t node_index;
  explicit NonFiniteError(int32_t idx)
      : std::runtime_error("non-finite value encountered at tape node " + std::to_string(idx)),
        node_index(idx) {}
};

// Gradient of a scalar function of `params` (extra constant inputs passed through).
using TapedFn = std::function<Var(Tape&, std::span<const Var>, std::span<const double>)>;

inline GradientVector reverse_grad(const TapedFn& f, std::span<const double> params,
                                   std::span<const double> inputs = {}) {
  Tape tape;
  std::vector<Var> p = make_leaves(tape, params);
  Var out = f(tape, p, inputs);
  if (!std::isfinite(out.val)) throw NonFiniteError(tape.first_nonfinite());
  std::vector<double> adj = tape.reverse(out.idx);
  GradientVector g;
  g.partials.assign(adj.begin(), adj.begin() + static_cast<long>(params.size()));
  return g;
}

struct Derivs {
  double value;
  double d1;
  double d2;
};

// Value and first/second derivative of f along coordinate k at x.
inline Derivs directional_derivs(const std::function<Dual2<double>(std::span<const Dual2<double>>)>& f,
                                 std::span<const double> x, size_t k) {
  std::vector<Dual2<double>> xs(x.size());
  for (size_t i = 0; i < x.size(); ++i) xs[i] = {x[i], i == k ? 1.0 : 0.0, 0.0};
  Dual2<double> r = f(xs);
  if (!std::isfinite(r.v) || !std::isfinite(r.d1) || !std::isfinite(r.d2))
    throw std::runtime_error("non-finite value in directional derivative propagation");
  return {r.v, r.d1, r.d2};
}

}  // namespace pidon::ad
