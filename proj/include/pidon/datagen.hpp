#pragma once

// Input-function samplers (Gaussian random fields, boundary curves) and the
// reference solvers that produce ground truth for the benchmarks.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pidon/deeponet.hpp"

namespace pidon::datagen {

using deeponet::FieldSample;

// ---- Gaussian random fields -------------------------------------------------

// Mean-zero GRF with exponential-quadratic kernel exp(-|x1-x2|^2 / 2 l^2),
// sampled on a fixed grid via a cached Cholesky factor. Jitter starts at
// 1e-10 and escalates by 10x up to 1e-6 if the factorization fails.
class GrfSampler {
 public:
  GrfSampler(std::vector<double> grid, double length_scale);

  std::vector<double> sample(std::mt19937_64& rng) const;
  const std::vector<double>& grid() const { return grid_; }
  double jitter_used() const { return jitter_; }

 private:
  std::vector<double> grid_;
  double length_scale_;
  double jitter_ = 0.0;
  std::vector<double> chol_;  // lower factor, row-major n x n
};

// Periodic GRF N(0, amplitude^2 (-Laplacian + shift I)^{-power}) on [0,1),
// synthesized from independent Gaussian Fourier coefficients.
struct PeriodicGrfSpec {
  double amplitude = 25.0;
  double laplacian_shift = 25.0;  // the 5^2 shift
  int power = 4;
  int modes = 63;  // K; coefficients k = 0..K
};

// Per-mode variance amplitude^2 ((2 pi k)^2 + shift)^(-power).
double periodic_mode_variance(const PeriodicGrfSpec& spec, int k);

std::vector<double> periodic_grf_sample(const PeriodicGrfSpec& spec, std::span<const double> grid,
                                        std::mt19937_64& rng);

// ---- Reference solvers ---------------------------------------------------------

// Adaptive Dormand-Prince integration of s' = u(x), s(0) = 0, with linear
// interpolation of u between sensors; returns s on the sensor grid.
std::vector<double> solve_antiderivative_rk45(const FieldSample& u, double abs_tol = 1e-9);

// Crank-Nicolson diffusion with explicit predictor-corrector reaction for
// s_t = D s_xx + k s^2 + u(x), zero IC/BC on [0,1]^2. Returns s on the
// nx-by-nt grid, time-major: s[it*nx + ix] with x_i = i/(nx-1), t_n = n/(nt-1).
std::vector<double> solve_diffusion_reaction(const FieldSample& u, double D, double k, int nx, int nt);

// Same scheme with a general source f(x, t) (used by convergence tests).
std::vector<double> solve_diffusion_reaction_source(const std::function<double(double, double)>& f,
                                                    double D, double k, int nx, int nt);

// Fourier pseudo-spectral ETDRK4 for periodic Burgers s_t + s s_x = nu s_xx
// on [0,1) with initial condition u0 on the uniform nx grid. Snapshots at
// t = 0, snapshot_every, ..., 1; returned snapshot-major [isnap*nx + ix].
std::vector<double> solve_burgers_spectral(std::span<const double> u0, double nu, int nx, double dt,
                                           double snapshot_every, int* num_snapshots = nullptr);

// ---- Boundary curves ------------------------------------------------------------

struct BoundaryCurve {
  std::vector<double> points;  // m x 2, row-major
  bool closed = true;
  int num_points() const { return static_cast<int>(points.size()) / 2; }
};

double sdf_circle(double r, double x, double y);

// m points at evenly spaced angles theta_j = 2 pi j / m.
BoundaryCurve circle_sensors(double r, int m);

// Selig-style airfoil file: optional non-numeric header line, then x y pairs.
// The polyline is resampled to m points by arclength and normalized to zero
// mean, unit variance per coordinate.
BoundaryCurve load_airfoil(const std::string& path, int m = 250);

// Parse + resample + normalize from an already-loaded point list (test seam).
BoundaryCurve normalize_curve(std::vector<double> points, int m);

// Flatten a curve into a FieldSample whose branch input is the interleaved
// point list (x1, y1, ..., xm, ym).
FieldSample curve_to_sample(const BoundaryCurve& c, int64_t id);

}  // namespace pidon::datagen
