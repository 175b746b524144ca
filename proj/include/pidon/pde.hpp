#pragma once

// Benchmark definitions: PDE residual operators built from nested automatic
// differentiation, and the composite IC/BC/physics losses.
//
// Residuals and losses are templated over an operator evaluator so they run
// both on plain doubles (reference/oracle path) and on tape variables
// (training path). An evaluator exposes the solution field G(u) at a query
// point together with first/second directional derivatives.

#include <array>
#include <cstring>
#include <optional>
#include <string>
#include <unordered_map>

#include "pidon/deeponet.hpp"

namespace pidon::pde {

using ad::Dual1;
using ad::Dual2;
using ad::Var;
using deeponet::DeepOnetModel;
using deeponet::FieldSample;

enum class PdeKind { Antiderivative, DiffusionReaction, Burgers, Eikonal };

inline std::string to_string(PdeKind k) {
  switch (k) {
    case PdeKind::Antiderivative: return "antiderivative";
    case PdeKind::DiffusionReaction: return "diffusion_reaction";
    case PdeKind::Burgers: return "burgers";
    case PdeKind::Eikonal: return "eikonal";
  }
  return "antiderivative";
}

inline PdeKind pde_kind_from_string(const std::string& s) {
  if (s == "antiderivative") return PdeKind::Antiderivative;
  if (s == "diffusion_reaction") return PdeKind::DiffusionReaction;
  if (s == "burgers") return PdeKind::Burgers;
  if (s == "eikonal") return PdeKind::Eikonal;
  throw std::invalid_argument("unknown benchmark: " + s);
}

struct CollocationSpec {
  int Q = 100;  // residual points per sample
  int P = 100;  // constraint points per sample
};

struct PdeProblem {
  PdeKind kind = PdeKind::Antiderivative;
  double D = 0.01;   // diffusion coefficient (diffusion-reaction)
  double k = 0.01;   // reaction rate (diffusion-reaction)
  double nu = 0.01;  // viscosity (Burgers)
  double lambda_ic = 1.0;
  CollocationSpec colloc;
  double box_lo = -2.0, box_hi = 2.0;  // Eikonal computational box
};

// Guard inside the Eikonal gradient norm; keeps the sqrt differentiable at
// critical points of G.
inline constexpr double kEikonalEps = 1e-12;

// ---- Evaluators -------------------------------------------------------------------

// Plain-double evaluator over a fixed model and input sample.
class ModelEval {
 public:
  ModelEval(const DeepOnetModel& model, std::span<const double> u)
      : model_(&model), bfeat_(deeponet::branch_features(model, u)) {}

  double value(std::span<const double> y) const {
    auto t = deeponet::trunk_features(*model_, y);
    return deeponet::merge_features(std::span<const double>(bfeat_), std::span<const double>(t));
  }
  Dual1<double> d1(std::span<const double> y, int k) const {
    std::vector<Dual1<double>> yd(y.size());
    for (size_t i = 0; i < y.size(); ++i) yd[i] = {y[i], static_cast<int>(i) == k ? 1.0 : 0.0};
    auto t = deeponet::trunk_features(*model_, std::span<const Dual1<double>>(yd));
    return deeponet::merge_features(std::span<const double>(bfeat_), std::span<const Dual1<double>>(t));
  }
  Dual2<double> d2(std::span<const double> y, int k) const {
    std::vector<Dual2<double>> yd(y.size());
    for (size_t i = 0; i < y.size(); ++i) yd[i] = {y[i], static_cast<int>(i) == k ? 1.0 : 0.0, 0.0};
    auto t = deeponet::trunk_features(*model_, std::span<const Dual2<double>>(yd));
    return deeponet::merge_features(std::span<const double>(bfeat_), std::span<const Dual2<double>>(t));
  }

 private:
  const DeepOnetModel* model_;
  std::vector<double> bfeat_;
};

// Trunk-feature cache shared across samples within one tape lifetime; query
// points that repeat (e.g. a sensor-aligned collocation grid) are recorded
// once.
struct TrunkCache {
  std::unordered_map<std::string, std::vector<Var>> val;
  std::unordered_map<std::string, nn::Dual1Vec<Var>> d1;
  std::unordered_map<std::string, nn::Dual2Vec<Var>> d2;

  static std::string key(std::span<const double> y, int k) {
    std::string s(y.size() * sizeof(double) + 1, '\0');
    std::memcpy(s.data(), y.data(), y.size() * sizeof(double));
    s.back() = static_cast<char>('0' + k);
    return s;
  }
  void clear() {
    val.clear();
    d1.clear();
    d2.clear();
  }
};

// Tape-variable evaluator: parameters are leaves on a tape, branch features
// are recorded once per sample.
class TapedModelEval {
 public:
  TapedModelEval(const DeepOnetModel& model, std::span<const Var> theta, std::span<const double> u,
                 TrunkCache* cache = nullptr)
      : model_(&model), theta_(theta), cache_(cache),
        bfeat_(deeponet::branch_features(model, theta, u)) {}

  Var value(std::span<const double> y) const {
    if (!cache_) return merge(deeponet::trunk_features(*model_, theta_, y));
    auto key = TrunkCache::key(y, 9);
    auto it = cache_->val.find(key);
    if (it == cache_->val.end())
      it = cache_->val.emplace(std::move(key), deeponet::trunk_features(*model_, theta_, y)).first;
    return merge(it->second);
  }
  Dual1<Var> d1(std::span<const double> y, int k) const {
    std::vector<Dual1<double>> yd(y.size());
    for (size_t i = 0; i < y.size(); ++i) yd[i] = {y[i], static_cast<int>(i) == k ? 1.0 : 0.0};
    std::span<const Dual1<double>> yspan(yd);
    if (!cache_) return merge(deeponet::trunk_features(*model_, theta_, yspan));
    auto key = TrunkCache::key(y, k);
    auto it = cache_->d1.find(key);
    if (it == cache_->d1.end())
      it = cache_->d1.emplace(std::move(key), deeponet::trunk_features(*model_, theta_, yspan)).first;
    return merge(it->second);
  }
  Dual2<Var> d2(std::span<const double> y, int k) const {
    std::vector<Dual2<double>> yd(y.size());
    for (size_t i = 0; i < y.size(); ++i) yd[i] = {y[i], static_cast<int>(i) == k ? 1.0 : 0.0, 0.0};
    std::span<const Dual2<double>> yspan(yd);
    if (!cache_) return merge(deeponet::trunk_features(*model_, theta_, yspan));
    auto key = TrunkCache::key(y, 3 + k);
    auto it = cache_->d2.find(key);
    if (it == cache_->d2.end())
      it = cache_->d2.emplace(std::move(key), deeponet::trunk_features(*model_, theta_, yspan)).first;
    return merge(it->second);
  }

 private:
  Var merge(const std::vector<Var>& t) const {
    return deeponet::merge_features(std::span<const Var>(bfeat_), std::span<const Var>(t));
  }
  Dual1<Var> merge(const nn::Dual1Vec<Var>& t) const {
    return deeponet::merge_features(std::span<const Var>(bfeat_), t);
  }
  Dual2<Var> merge(const nn::Dual2Vec<Var>& t) const {
    return deeponet::merge_features(std::span<const Var>(bfeat_), t);
  }

  const DeepOnetModel* model_;
  std::span<const Var> theta_;
  TrunkCache* cache_;
  std::vector<Var> bfeat_;
};

// ---- Residual operators -------------------------------------------------------------

// Value of u at a sensor location (collocation coincides with sensors; no
// interpolation).
inline double sensor_value(const FieldSample& u, double x, double tol = 1e-9) {
  for (size_t j = 0; j < u.locations.size(); ++j)
    if (std::abs(u.locations[j] - x) <= tol) return u.values[j];
  throw std::invalid_argument("collocation point is not on the sensor grid and interpolation is disabled");
}

// dG/dy at x minus u(x).
template <class E>
auto residual_antiderivative_t(const E& g, double u_at_x, double x) {
  std::array<double, 1> y{x};
  auto d = g.d1(std::span<const double>(y), 0);
  return d.d - u_at_x;
}

// R = dG/dt - D d2G/dx2 - k G^2 (the loss later compares R to u(x)).
template <class E>
auto residual_diffusion_reaction_t(const E& g, double D, double k, double x, double t) {
  std::array<double, 2> y{x, t};
  auto dx = g.d2(std::span<const double>(y), 0);
  auto dt = g.d1(std::span<const double>(y), 1);
  return dt.d - D * dx.d2 - k * ad::square(dx.v);
}

// R = dG/dt + G dG/dx - nu d2G/dx2.
template <class E>
auto residual_burgers_t(const E& g, double nu, double x, double t) {
  std::array<double, 2> y{x, t};
  auto dx = g.d2(std::span<const double>(y), 0);
  auto dt = g.d1(std::span<const double>(y), 1);
  return dt.d + dx.v * dx.d1 - nu * dx.d2;
}

// |grad G| with an epsilon guard under the radical; loss penalizes (R - 1)^2.
template <class E>
auto residual_eikonal_t(const E& g, double x, double y) {
  using ad::sqrt;
  using std::sqrt;
  std::array<double, 2> p{x, y};
  auto gx = g.d1(std::span<const double>(p), 0);
  auto gy = g.d1(std::span<const double>(p), 1);
  return sqrt(gx.d * gx.d + gy.d * gy.d + kEikonalEps);
}

// Spec-level double entry points.
inline double residual_antiderivative(const DeepOnetModel& model, const FieldSample& u, double x) {
  return residual_antiderivative_t(ModelEval(model, u.values), sensor_value(u, x), x);
}
inline double residual_diffusion_reaction(const DeepOnetModel& model, const FieldSample& u, double x,
                                          double t, double D = 0.01, double k = 0.01) {
  return residual_diffusion_reaction_t(ModelEval(model, u.values), D, k, x, t);
}
inline double residual_burgers(const DeepOnetModel& model, const FieldSample& u0, double x, double t,
                               double nu = 0.01) {
  return residual_burgers_t(ModelEval(model, u0.values), nu, x, t);
}
inline double residual_eikonal(const DeepOnetModel& model, const FieldSample& curve, double x, double y) {
  return residual_eikonal_t(ModelEval(model, curve.values), x, y);
}

// ---- Batches and losses ------------------------------------------------------------

// Fixed point sets for one input sample. Coordinates are padded to 2 entries;
// 1-D benchmarks use only the first.
struct SamplePoints {
  const FieldSample* u = nullptr;
  std::vector<std::array<double, 2>> cons;  // constraint points (IC or boundary)
  std::vector<double> cons_target;
  std::vector<double> bc_t;                 // Burgers periodic-BC time samples
  std::vector<std::array<double, 2>> colloc;
  std::vector<double> colloc_target;        // residual data target, e.g. u(x_r)
};

struct PointBatch {
  std::vector<SamplePoints> entries;
};

template <class S>
struct LossTerms {
  std::optional<S> ic, bc, physics, op;
  S total;
};

namespace detail {
inline double sum_sq(std::span<const double> xs) {
  double acc = 0.0;
  for (double x : xs) acc += x * x;
  return acc;
}
inline Var sum_sq(std::span<const Var> xs) { return ad::sum_squares(xs); }

template <class S>
S mean_sq(const std::vector<S>& xs) {
  return sum_sq(std::span<const S>(xs)) * (1.0 / static_cast<double>(xs.size()));
}
}  // namespace detail

// loss = mean |G(u)(0)|^2 + mean (dG/dy - u)^2 over sensor-aligned collocation.
template <class Factory>
auto loss_antiderivative(Factory&& make_eval, const PointBatch& batch) {
  using S = decltype(make_eval(*batch.entries[0].u).value(std::span<const double>()));
  std::vector<S> op_terms, phys_terms;
  for (const SamplePoints& e : batch.entries) {
    auto g = make_eval(*e.u);
    for (size_t j = 0; j < e.cons.size(); ++j) {
      std::span<const double> y(e.cons[j].data(), 1);
      op_terms.push_back(g.value(y) - e.cons_target[j]);
    }
    for (size_t j = 0; j < e.colloc.size(); ++j)
      phys_terms.push_back(residual_antiderivative_t(g, e.colloc_target[j], e.colloc[j][0]));
  }
  LossTerms<S> out;
  out.op = detail::mean_sq(op_terms);
  out.physics = detail::mean_sq(phys_terms);
  out.total = *out.op + *out.physics;
  return out;
}

// loss = mean (G - 0)^2 on the space-time boundary + mean (R - u(x_r))^2.
template <class Factory>
auto loss_diffusion_reaction(Factory&& make_eval, double D, double k, const PointBatch& batch) {
  using S = decltype(make_eval(*batch.entries[0].u).value(std::span<const double>()));
  std::vector<S> op_terms, phys_terms;
  for (const SamplePoints& e : batch.entries) {
    auto g = make_eval(*e.u);
    for (size_t j = 0; j < e.cons.size(); ++j) {
      std::span<const double> y(e.cons[j].data(), 2);
      op_terms.push_back(g.value(y) - e.cons_target[j]);
    }
    for (size_t j = 0; j < e.colloc.size(); ++j)
      phys_terms.push_back(residual_diffusion_reaction_t(g, D, k, e.colloc[j][0], e.colloc[j][1]) -
                           e.colloc_target[j]);
  }
  LossTerms<S> out;
  out.op = detail::mean_sq(op_terms);
  out.physics = detail::mean_sq(phys_terms);
  out.total = *out.op + *out.physics;
  return out;
}

// loss = lambda * L_IC + L_BC (value and x-derivative periodicity) + L_physics.
template <class Factory>
auto loss_burgers(Factory&& make_eval, double nu, double lambda_ic, const PointBatch& batch) {
  using S = decltype(make_eval(*batch.entries[0].u).value(std::span<const double>()));
  std::vector<S> ic_terms, bc_val_terms, bc_der_terms, phys_terms;
  for (const SamplePoints& e : batch.entries) {
    auto g = make_eval(*e.u);
    for (size_t j = 0; j < e.cons.size(); ++j) {
      std::span<const double> y(e.cons[j].data(), 2);
      ic_terms.push_back(g.value(y) - e.cons_target[j]);
    }
    for (double t : e.bc_t) {
      std::array<double, 2> y0{0.0, t}, y1{1.0, t};
      auto g0 = g.d1(std::span<const double>(y0), 0);
      auto g1 = g.d1(std::span<const double>(y1), 0);
      bc_val_terms.push_back(g0.v - g1.v);
      bc_der_terms.push_back(g0.d - g1.d);
    }
    for (size_t j = 0; j < e.colloc.size(); ++j)
      phys_terms.push_back(residual_burgers_t(g, nu, e.colloc[j][0], e.colloc[j][1]));
  }
  LossTerms<S> out;
  out.ic = detail::mean_sq(ic_terms);
  out.bc = detail::mean_sq(bc_val_terms) + detail::mean_sq(bc_der_terms);
  out.physics = detail::mean_sq(phys_terms);
  out.total = lambda_ic * *out.ic + *out.bc + *out.physics;
  return out;
}

// loss = mean G^2 on the curve + mean (|grad G| - 1)^2 in the box.
template <class Factory>
auto loss_eikonal(Factory&& make_eval, const PointBatch& batch) {
  using S = decltype(make_eval(*batch.entries[0].u).value(std::span<const double>()));
  std::vector<S> bc_terms, phys_terms;
  for (const SamplePoints& e : batch.entries) {
    auto g = make_eval(*e.u);
    for (size_t j = 0; j < e.cons.size(); ++j) {
      std::span<const double> y(e.cons[j].data(), 2);
      bc_terms.push_back(g.value(y) - e.cons_target[j]);
    }
    for (size_t j = 0; j < e.colloc.size(); ++j)
      phys_terms.push_back(residual_eikonal_t(g, e.colloc[j][0], e.colloc[j][1]) - 1.0);
  }
  LossTerms<S> out;
  out.bc = detail::mean_sq(bc_terms);
  out.physics = detail::mean_sq(phys_terms);
  out.total = *out.bc + *out.physics;
  return out;
}

// Dispatch on the benchmark kind; used identically by the double and taped paths.
template <class Factory>
auto composite_loss(const PdeProblem& prob, Factory&& make_eval, const PointBatch& batch) {
  switch (prob.kind) {
    case PdeKind::Antiderivative: return loss_antiderivative(make_eval, batch);
    case PdeKind::DiffusionReaction: return loss_diffusion_reaction(make_eval, prob.D, prob.k, batch);
    case PdeKind::Burgers: return loss_burgers(make_eval, prob.nu, prob.lambda_ic, batch);
    case PdeKind::Eikonal: return loss_eikonal(make_eval, batch);
  }
  throw std::logic_error("composite_loss: bad kind");
}

// Operator-data-only loss over explicit (y, target) constraint rows; used by
// the conventional-DeepONet baseline.
template <class Factory>
auto operator_only_loss(Factory&& make_eval, const PointBatch& batch, int query_dim) {
  using S = decltype(make_eval(*batch.entries[0].u).value(std::span<const double>()));
  std::vector<S> terms;
  for (const SamplePoints& e : batch.entries) {
    auto g = make_eval(*e.u);
    for (size_t j = 0; j < e.cons.size(); ++j) {
      std::span<const double> y(e.cons[j].data(), static_cast<size_t>(query_dim));
      terms.push_back(g.value(y) - e.cons_target[j]);
    }
  }
  LossTerms<S> out;
  out.op = detail::mean_sq(terms);
  out.total = *out.op;
  return out;
}

inline LossTerms<double> composite_loss(const DeepOnetModel& model, const PdeProblem& prob,
                                        const PointBatch& batch) {
  return composite_loss(prob, [&](const FieldSample& u) { return ModelEval(model, u.values); }, batch);
}

}  // namespace pidon::pde
