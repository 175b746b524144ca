#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "pidon/autodiff.hpp"

using namespace pidon::ad;

namespace {

// Tiny hand-rolled MLP over tape variables for gradient checks that should
// not depend on the nn module.
Var two_layer_loss(Tape& tape, std::span<const Var> p, double x) {
  // p = [w0, w1, b0, b1, w2, w3, b2]
  Var h0 = tanh(p[0] * x + p[2]);
  Var h1 = tanh(p[1] * x + p[3]);
  Var out = p[4] * h0 + p[5] * h1 + p[6];
  (void)tape;
  return out * out;
}

double two_layer_loss_value(std::span<const double> p, double x) {
  double h0 = std::tanh(p[0] * x + p[2]);
  double h1 = std::tanh(p[1] * x + p[3]);
  double out = p[4] * h0 + p[5] * h1 + p[6];
  return out * out;
}

}  // namespace

TEST_CASE("reverse_grad on w^2") {
  auto f = [](Tape&, std::span<const Var> p, std::span<const double>) { return p[0] * p[0]; };
  std::vector<double> w{3.0};
  GradientVector g = reverse_grad(f, w);
  CHECK(g.partials.size() == 1);
  CHECK(g.partials[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("reverse_grad on tanh at 0") {
  auto f = [](Tape&, std::span<const Var> p, std::span<const double>) { return tanh(p[0]); };
  std::vector<double> w{0.0};
  CHECK(reverse_grad(f, w).partials[0] == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("two-layer MLP loss gradient matches central differences") {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> dist(0.0, 1.0);
  const double x = 0.7;
  auto f = [&](Tape& t, std::span<const Var> p, std::span<const double>) {
    return two_layer_loss(t, p, x);
  };
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<double> p(7);
    for (double& v : p) v = dist(rng);
    GradientVector g = reverse_grad(f, p);
    const double h = 1e-6;
    for (size_t i = 0; i < p.size(); ++i) {
      std::vector<double> pp = p, pm = p;
      pp[i] += h;
      pm[i] -= h;
      double fd = (two_layer_loss_value(pp, x) - two_layer_loss_value(pm, x)) / (2 * h);
      CHECK(std::abs(g.partials[i] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("directional_derivs analytic cases") {
  auto cube = [](std::span<const Dual2<double>> v) { return v[0] * v[0] * v[0]; };
  std::vector<double> x{2.0};
  Derivs d = directional_derivs(cube, x, 0);
  CHECK(d.value == doctest::Approx(8.0).epsilon(1e-14));
  CHECK(d.d1 == doctest::Approx(12.0).epsilon(1e-14));
  CHECK(d.d2 == doctest::Approx(12.0).epsilon(1e-14));

  auto sine = [](std::span<const Dual2<double>> v) { return sin(v[0]); };
  std::vector<double> x0{0.0};
  Derivs s = directional_derivs(sine, x0, 0);
  CHECK(s.value == doctest::Approx(0.0));
  CHECK(s.d1 == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(s.d2 == doctest::Approx(0.0));
}

TEST_CASE("gradient through a forward-mode derivative") {
  // residual(theta) = d/dx[theta*x] - 1; at theta=1 the squared residual has
  // zero gradient.
  auto sq_res = [](Tape&, std::span<const Var> p, std::span<const double> in) {
    Dual1<Var> x{Var{p[0].tape, p[0].idx, p[0].val} * 0.0 + in[0], p[0] * 0.0 + 1.0};
    Dual1<Var> g = p[0] * x;
    Var r = g.d - 1.0;
    return r * r;
  };
  std::vector<double> theta{1.0};
  std::vector<double> in{0.3};
  CHECK(reverse_grad(sq_res, theta, in).partials[0] == doctest::Approx(0.0));

  // residual(theta) = d/dx[theta*x^2] at x=1 is 2*theta; d/dtheta (2theta)^2 = 8theta.
  auto sq_res2 = [](Tape&, std::span<const Var> p, std::span<const double>) {
    Dual1<Var> x{p[0] * 0.0 + 1.0, p[0] * 0.0 + 1.0};
    Dual1<Var> g = p[0] * (x * x);
    return g.d * g.d;
  };
  std::vector<double> theta2{2.0};
  CHECK(reverse_grad(sq_res2, theta2).partials[0] == doctest::Approx(16.0).epsilon(1e-13));
}

TEST_CASE("Dual2 elementary second derivatives match closed forms") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  for (int i = 0; i < 1000; ++i) {
    double x = dist(rng);
    Dual2<double> d{x, 1.0, 0.0};
    Dual2<double> t = tanh(d);
    double th = std::tanh(x);
    CHECK(t.d1 == doctest::Approx(1 - th * th).epsilon(1e-15));
    CHECK(t.d2 == doctest::Approx(-2 * th * (1 - th * th)).epsilon(1e-14));
    Dual2<double> s = sin(d);
    CHECK(s.d1 == doctest::Approx(std::cos(x)).epsilon(1e-15));
    CHECK(s.d2 == doctest::Approx(-std::sin(x)).epsilon(1e-14));
    Dual2<double> e = exp(d);
    CHECK(e.d1 == doctest::Approx(std::exp(x)).epsilon(1e-15));
    CHECK(e.d2 == doctest::Approx(std::exp(x)).epsilon(1e-15));
  }
}

TEST_CASE("gradient is linear in the objective") {
  std::vector<double> p{0.4, -1.2};
  auto f = [](Tape&, std::span<const Var> v, std::span<const double>) { return tanh(v[0]) * v[1]; };
  auto g = [](Tape&, std::span<const Var> v, std::span<const double>) { return exp(v[0] - v[1]); };
  const double a = 2.5, b = -0.75;
  auto combo = [&](Tape& t, std::span<const Var> v, std::span<const double> in) {
    return a * f(t, v, in) + b * g(t, v, in);
  };
  GradientVector gf = reverse_grad(f, p), gg = reverse_grad(g, p), gc = reverse_grad(combo, p);
  for (size_t i = 0; i < p.size(); ++i)
    CHECK(gc.partials[i] == doctest::Approx(a * gf.partials[i] + b * gg.partials[i]).epsilon(1e-14));
}

TEST_CASE("gradients are bit-deterministic") {
  std::vector<double> p{0.1, 0.2, 0.3};
  auto f = [](Tape&, std::span<const Var> v, std::span<const double>) {
    return sin(v[0]) * exp(v[1]) / (v[2] + 2.0);
  };
  GradientVector g1 = reverse_grad(f, p), g2 = reverse_grad(f, p);
  CHECK(g1.partials == g2.partials);
}

TEST_CASE("composite gradient matches finite differences at random points") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> dist(0.2, 1.5);
  auto f = [](Tape&, std::span<const Var> v, std::span<const double>) {
    return sqrt(v[0] * v[0] + v[1] * v[1]) * tanh(v[2]) + cos(v[0] * v[1]) / v[2] +
           pow(v[1], 3.0) - elu(v[0] - v[2]);
  };
  auto fval = [](std::span<const double> v) {
    return std::sqrt(v[0] * v[0] + v[1] * v[1]) * std::tanh(v[2]) + std::cos(v[0] * v[1]) / v[2] +
           std::pow(v[1], 3.0) - elu(v[0] - v[2]);
  };
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> p{dist(rng), dist(rng), dist(rng)};
    GradientVector g = reverse_grad(f, p);
    for (size_t i = 0; i < 3; ++i) {
      const double h = 1e-6;
      std::vector<double> pp = p, pm = p;
      pp[i] += h;
      pm[i] -= h;
      double fd = (fval(pp) - fval(pm)) / (2 * h);
      CHECK(std::abs(g.partials[i] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("non-finite values raise an error carrying a node index") {
  auto f = [](Tape&, std::span<const Var> v, std::span<const double>) { return sqrt(v[0]); };
  std::vector<double> p{-1.0};
  CHECK_THROWS_AS((void)reverse_grad(f, p), NonFiniteError);
  try {
    (void)reverse_grad(f, p);
  } catch (const NonFiniteError& e) {
    CHECK(e.node_index >= 0);
  }
}

TEST_CASE("fused primitives match elementwise compositions") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> dist;
  std::vector<double> av(6), bv(6);
  for (double& v : av) v = dist(rng);
  for (double& v : bv) v = dist(rng);

  Tape t1;
  std::vector<Var> a1 = make_leaves(t1, av), b1 = make_leaves(t1, bv);
  Var d1 = dot(std::span<const Var>(a1), std::span<const Var>(b1));
  std::vector<double> adj1 = t1.reverse(d1.idx);

  Tape t2;
  std::vector<Var> a2 = make_leaves(t2, av), b2 = make_leaves(t2, bv);
  Var d2 = a2[0] * b2[0];
  for (size_t i = 1; i < a2.size(); ++i) d2 = d2 + a2[i] * b2[i];
  std::vector<double> adj2 = t2.reverse(d2.idx);

  CHECK(d1.val == doctest::Approx(d2.val).epsilon(1e-15));
  for (size_t i = 0; i < 12; ++i) CHECK(adj1[i] == doctest::Approx(adj2[i]).epsilon(1e-14));

  Tape t3;
  std::vector<Var> w = make_leaves(t3, av);
  Var b = make_leaf(t3, 0.5);
  Var aff = affine(std::span<const Var>(w), std::span<const double>(bv), b);
  double expect = 0.5;
  for (size_t i = 0; i < 6; ++i) expect += av[i] * bv[i];
  CHECK(aff.val == doctest::Approx(expect).epsilon(1e-15));
  std::vector<double> adj3 = t3.reverse(aff.idx);
  for (size_t i = 0; i < 6; ++i) CHECK(adj3[i] == doctest::Approx(bv[i]).epsilon(1e-15));
  CHECK(adj3[6] == doctest::Approx(1.0));

  Tape t4;
  std::vector<Var> xs = make_leaves(t4, av);
  Var ss = sum_squares(std::span<const Var>(xs));
  double sexp = 0.0;
  for (double v : av) sexp += v * v;
  CHECK(ss.val == doctest::Approx(sexp).epsilon(1e-15));
  std::vector<double> adj4 = t4.reverse(ss.idx);
  for (size_t i = 0; i < 6; ++i) CHECK(adj4[i] == doctest::Approx(2 * av[i]).epsilon(1e-15));

  Tape t5;
  std::vector<Var> ys = make_leaves(t5, av);
  CHECK(sum(std::span<const Var>(ys)).val ==
        doctest::Approx(av[0] + av[1] + av[2] + av[3] + av[4] + av[5]).epsilon(1e-15));
}

TEST_CASE("nested Dual2 over tape variables gives exact residual gradients") {
  // f(x) = tanh(w*x); d2f/dx2 depends on w; check d/dw [d2f/dx2] by FD.
  const double x = 0.4, w0 = 1.3;
  auto d2_of = [&](double w) {
    Dual2<double> xd{x, 1.0, 0.0};
    Dual2<double> out = tanh(w * xd);
    return out.d2;
  };
  Tape tape;
  Var w = make_leaf(tape, w0);
  Dual2<Var> xd{w * 0.0 + x, w * 0.0 + 1.0, w * 0.0};
  Dual2<Var> out = tanh(w * xd);
  std::vector<double> adj = tape.reverse(out.d2.idx);
  const double h = 1e-6;
  double fd = (d2_of(w0 + h) - d2_of(w0 - h)) / (2 * h);
  CHECK(std::abs(adj[w.idx] - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
}
