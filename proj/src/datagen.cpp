#include "pidon/datagen.hpp"

#include <fftw3.h>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace pidon::datagen {

namespace {
constexpr double kPi = std::numbers::pi;
}

// ---- GRF -----------------------------------------------------------------------

GrfSampler::GrfSampler(std::vector<double> grid, double length_scale)
    : grid_(std::move(grid)), length_scale_(length_scale) {
  const int n = static_cast<int>(grid_.size());
  for (int i = 1; i < n; ++i)
    if (grid_[static_cast<size_t>(i)] <= grid_[static_cast<size_t>(i) - 1])
      throw std::invalid_argument("GrfSampler: grid must be strictly increasing");
  Eigen::MatrixXd K(n, n);
  const double inv = 1.0 / (2.0 * length_scale_ * length_scale_);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double dx = grid_[static_cast<size_t>(i)] - grid_[static_cast<size_t>(j)];
      K(i, j) = std::exp(-dx * dx * inv);
    }
  for (double jitter = 1e-10; jitter <= 1e-6 * 1.0000001; jitter *= 10.0) {
    Eigen::MatrixXd Kj = K + jitter * Eigen::MatrixXd::Identity(n, n);
    Eigen::LLT<Eigen::MatrixXd> llt(Kj);
    if (llt.info() == Eigen::Success) {
      jitter_ = jitter;
      Eigen::MatrixXd L = llt.matrixL();
      chol_.resize(static_cast<size_t>(n) * n);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) chol_[static_cast<size_t>(i) * n + j] = L(i, j);
      return;
    }
  }
  throw std::runtime_error("GrfSampler: Cholesky failed even with jitter 1e-6");
}

std::vector<double> GrfSampler::sample(std::mt19937_64& rng) const {
  const int n = static_cast<int>(grid_.size());
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> z(static_cast<size_t>(n));
  for (double& v : z) v = dist(rng);
  std::vector<double> u(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int j = 0; j <= i; ++j) acc += chol_[static_cast<size_t>(i) * n + j] * z[static_cast<size_t>(j)];
    u[static_cast<size_t>(i)] = acc;
  }
  return u;
}

double periodic_mode_variance(const PeriodicGrfSpec& spec, int k) {
  double w = 2.0 * kPi * k;
  return spec.amplitude * spec.amplitude * std::pow(w * w + spec.laplacian_shift, -spec.power);
}

std::vector<double> periodic_grf_sample(const PeriodicGrfSpec& spec, std::span<const double> grid,
                                        std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> u(grid.size(), 0.0);
  double a0 = dist(rng) * std::sqrt(periodic_mode_variance(spec, 0));
  for (double& v : u) v = a0;
  for (int k = 1; k <= spec.modes; ++k) {
    double sd = std::sqrt(periodic_mode_variance(spec, k));
    double a = dist(rng) * sd;
    double b = dist(rng) * sd;
    for (size_t i = 0; i < grid.size(); ++i) {
      double ph = 2.0 * kPi * k * grid[i];
      u[i] += a * std::cos(ph) + b * std::sin(ph);
    }
  }
  return u;
}

// ---- RK45 anti-derivative --------------------------------------------------------

namespace {

// Dormand-Prince 5(4) for the scalar quadrature s' = f(x).
double dopri5_integrate(const std::function<double(double)>& f, double x0, double x1, double s0,
                        double abs_tol) {
  static constexpr double c[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
  static constexpr double b5[7] = {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192,
                                   -2187.0 / 6784, 11.0 / 84, 0.0};
  static constexpr double b4[7] = {5179.0 / 57600, 0.0, 7571.0 / 16695, 393.0 / 640,
                                   -92097.0 / 339200, 187.0 / 2100, 1.0 / 40};
  double x = x0, s = s0;
  double h = x1 - x0;
  while (x < x1 - 1e-15) {
    if (x + h > x1) h = x1 - x;
    double kst[7];
    for (int i = 0; i < 7; ++i) kst[i] = f(x + c[i] * h);
    double inc5 = 0.0, inc4 = 0.0;
    for (int i = 0; i < 7; ++i) {
      inc5 += b5[i] * kst[i];
      inc4 += b4[i] * kst[i];
    }
    double err = std::abs(inc5 - inc4) * h;
    if (err <= abs_tol || h <= 1e-12) {
      if (h <= 1e-12 && err > abs_tol)
        throw std::runtime_error("solve_antiderivative_rk45: step-size underflow");
      s += h * inc5;
      x += h;
      if (err > 0.0) h *= std::min(5.0, 0.9 * std::pow(abs_tol / err, 0.2));
    } else {
      h *= std::max(0.1, 0.9 * std::pow(abs_tol / err, 0.2));
    }
  }
  return s;
}

}  // namespace

std::vector<double> solve_antiderivative_rk45(const FieldSample& u, double abs_tol) {
  const auto& x = u.locations;
  const auto& v = u.values;
  if (x.size() != v.size() || x.size() < 2)
    throw std::invalid_argument("solve_antiderivative_rk45: need matching grid/values");
  auto interp = [&](double xi) {
    auto it = std::upper_bound(x.begin(), x.end(), xi);
    size_t j = static_cast<size_t>(std::clamp<long>(it - x.begin() - 1, 0, static_cast<long>(x.size()) - 2));
    double t = (xi - x[j]) / (x[j + 1] - x[j]);
    return v[j] + t * (v[j + 1] - v[j]);
  };
  std::vector<double> s(x.size(), 0.0);
  for (size_t j = 1; j < x.size(); ++j)
    s[j] = dopri5_integrate(interp, x[j - 1], x[j], s[j - 1], abs_tol);
  return s;
}

// ---- Diffusion-reaction (Crank-Nicolson) ------------------------------------------

std::vector<double> solve_diffusion_reaction_source(const std::function<double(double, double)>& f,
                                                    double D, double k, int nx, int nt) {
  if (nx < 3 || nt < 3) throw std::invalid_argument("solve_diffusion_reaction: nx, nt >= 3");
  const double dx = 1.0 / (nx - 1);
  const double dt = 1.0 / (nt - 1);
  const double r = 0.5 * D * dt / (dx * dx);
  const int ni = nx - 2;  // interior unknowns

  // Prefactored Thomas coefficients for (I - r A), A the second difference.
  std::vector<double> cp(static_cast<size_t>(ni));  // modified upper diag
  {
    double diag = 1.0 + 2.0 * r;
    cp[0] = -r / diag;
    for (int i = 1; i < ni; ++i) cp[static_cast<size_t>(i)] = -r / (diag + r * cp[static_cast<size_t>(i) - 1]);
  }
  auto thomas = [&](std::vector<double>& rhs) {
    double diag = 1.0 + 2.0 * r;
    std::vector<double> dpr(static_cast<size_t>(ni));
    dpr[0] = rhs[0] / diag;
    for (int i = 1; i < ni; ++i)
      dpr[static_cast<size_t>(i)] =
          (rhs[static_cast<size_t>(i)] + r * dpr[static_cast<size_t>(i) - 1]) /
          (diag + r * cp[static_cast<size_t>(i) - 1]);
    rhs[static_cast<size_t>(ni) - 1] = dpr[static_cast<size_t>(ni) - 1];
    for (int i = ni - 2; i >= 0; --i)
      rhs[static_cast<size_t>(i)] = dpr[static_cast<size_t>(i)] - cp[static_cast<size_t>(i)] * rhs[static_cast<size_t>(i) + 1];
  };
  auto diffuse_explicit = [&](const std::vector<double>& s, int i) {
    double left = i > 0 ? s[static_cast<size_t>(i) - 1] : 0.0;
    double right = i < ni - 1 ? s[static_cast<size_t>(i) + 1] : 0.0;
    return r * (left - 2.0 * s[static_cast<size_t>(i)] + right);
  };

  std::vector<double> out(static_cast<size_t>(nx) * nt, 0.0);
  std::vector<double> s(static_cast<size_t>(ni), 0.0), star(static_cast<size_t>(ni)), rhs(static_cast<size_t>(ni));
  for (int n = 1; n < nt; ++n) {
    const double th = (n - 0.5) * dt;
    // predictor: reaction at t_n
    for (int i = 0; i < ni; ++i) {
      double x = (i + 1) * dx;
      rhs[static_cast<size_t>(i)] = s[static_cast<size_t>(i)] + diffuse_explicit(s, i) +
                                    dt * (k * s[static_cast<size_t>(i)] * s[static_cast<size_t>(i)] + f(x, th));
    }
    star = rhs;
    thomas(star);
    // corrector: reaction at the half step
    for (int i = 0; i < ni; ++i) {
      double x = (i + 1) * dx;
      double sh = 0.5 * (s[static_cast<size_t>(i)] + star[static_cast<size_t>(i)]);
      rhs[static_cast<size_t>(i)] =
          s[static_cast<size_t>(i)] + diffuse_explicit(s, i) + dt * (k * sh * sh + f(x, th));
    }
    thomas(rhs);
    s = rhs;
    double norm = 0.0;
    for (double v : s) norm = std::max(norm, std::abs(v));
    if (norm > 1e6) throw std::runtime_error("solve_diffusion_reaction: solution diverged");
    for (int i = 0; i < ni; ++i) out[static_cast<size_t>(n) * nx + i + 1] = s[static_cast<size_t>(i)];
  }
  return out;
}

std::vector<double> solve_diffusion_reaction(const FieldSample& u, double D, double k, int nx, int nt) {
  const auto& xg = u.locations;
  const auto& v = u.values;
  auto interp = [&](double xi, double) {
    auto it = std::upper_bound(xg.begin(), xg.end(), xi);
    size_t j = static_cast<size_t>(std::clamp<long>(it - xg.begin() - 1, 0, static_cast<long>(xg.size()) - 2));
    double t = (xi - xg[j]) / (xg[j + 1] - xg[j]);
    return v[j] + t * (v[j + 1] - v[j]);
  };
  return solve_diffusion_reaction_source(interp, D, k, nx, nt);
}

// ---- Burgers (ETDRK4 pseudo-spectral) ----------------------------------------------

std::vector<double> solve_burgers_spectral(std::span<const double> u0, double nu, int nx, double dt,
                                           double snapshot_every, int* num_snapshots) {
  if (static_cast<int>(u0.size()) != nx) throw std::invalid_argument("solve_burgers_spectral: u0 size != nx");
  using cplx = std::complex<double>;
  std::vector<cplx> v(static_cast<size_t>(nx)), buf(static_cast<size_t>(nx));
  fftw_plan fwd = fftw_plan_dft_1d(nx, reinterpret_cast<fftw_complex*>(buf.data()),
                                   reinterpret_cast<fftw_complex*>(buf.data()), FFTW_FORWARD, FFTW_ESTIMATE);
  fftw_plan bwd = fftw_plan_dft_1d(nx, reinterpret_cast<fftw_complex*>(buf.data()),
                                   reinterpret_cast<fftw_complex*>(buf.data()), FFTW_BACKWARD, FFTW_ESTIMATE);

  auto fft = [&](std::vector<cplx>& a) {
    buf = a;
    fftw_execute(fwd);
    a = buf;
  };
  auto ifft = [&](std::vector<cplx>& a) {
    buf = a;
    fftw_execute(bwd);
    for (cplx& c : a) c = cplx(0, 0);
    for (int i = 0; i < nx; ++i) a[static_cast<size_t>(i)] = buf[static_cast<size_t>(i)] / double(nx);
  };

  // Wavenumbers on [0,1): 2 pi * (0..nx/2, -nx/2+1..-1).
  std::vector<double> kw(static_cast<size_t>(nx));
  for (int j = 0; j < nx; ++j) kw[static_cast<size_t>(j)] = 2.0 * kPi * (j <= nx / 2 ? j : j - nx);
  std::vector<double> L(static_cast<size_t>(nx));
  for (int j = 0; j < nx; ++j) L[static_cast<size_t>(j)] = -nu * kw[static_cast<size_t>(j)] * kw[static_cast<size_t>(j)];
  // 2/3-rule dealiasing mask
  std::vector<double> mask(static_cast<size_t>(nx), 1.0);
  for (int j = 0; j < nx; ++j) {
    int jj = j <= nx / 2 ? j : nx - j;
    if (jj > nx / 3) mask[static_cast<size_t>(j)] = 0.0;
  }

  // ETDRK4 coefficients by contour averaging (Kassam & Trefethen).
  const int M = 32;
  std::vector<double> E(static_cast<size_t>(nx)), E2(static_cast<size_t>(nx)), Q(static_cast<size_t>(nx)),
      f1(static_cast<size_t>(nx)), f2(static_cast<size_t>(nx)), f3(static_cast<size_t>(nx));
  for (int j = 0; j < nx; ++j) {
    double hl = dt * L[static_cast<size_t>(j)];
    E[static_cast<size_t>(j)] = std::exp(hl);
    E2[static_cast<size_t>(j)] = std::exp(hl / 2.0);
    cplx q(0, 0), a(0, 0), b(0, 0), c(0, 0);
    for (int mi = 0; mi < M; ++mi) {
      cplx z = hl + std::exp(cplx(0, kPi * (mi + 0.5) / M));
      cplx z2 = z * z, z3 = z2 * z;
      q += (std::exp(z / 2.0) - 1.0) / z;
      a += (-4.0 - z + std::exp(z) * (4.0 - 3.0 * z + z2)) / z3;
      b += (2.0 + z + std::exp(z) * (-2.0 + z)) / z3;
      c += (-4.0 - 3.0 * z - z2 + std::exp(z) * (4.0 - z)) / z3;
    }
    Q[static_cast<size_t>(j)] = dt * (q / double(M)).real();
    f1[static_cast<size_t>(j)] = dt * (a / double(M)).real();
    f2[static_cast<size_t>(j)] = 2.0 * dt * (b / double(M)).real();
    f3[static_cast<size_t>(j)] = dt * (c / double(M)).real();
  }

  auto nonlinear = [&](const std::vector<cplx>& vh) {
    std::vector<cplx> w = vh;
    for (int j = 0; j < nx; ++j) w[static_cast<size_t>(j)] *= mask[static_cast<size_t>(j)];
    ifft(w);
    for (cplx& c : w) c = c * c;
    fft(w);
    for (int j = 0; j < nx; ++j)
      w[static_cast<size_t>(j)] *= cplx(0, -0.5 * kw[static_cast<size_t>(j)]) * mask[static_cast<size_t>(j)];
    return w;
  };

  for (int i = 0; i < nx; ++i) v[static_cast<size_t>(i)] = u0[static_cast<size_t>(i)];
  fft(v);

  const long steps_per_snap = std::lround(snapshot_every / dt);
  const long total_steps = std::lround(1.0 / dt);
  if (steps_per_snap < 1 || total_steps % steps_per_snap != 0)
    throw std::invalid_argument("solve_burgers_spectral: dt must divide snapshot_every and 1.0");
  const int nsnap = static_cast<int>(total_steps / steps_per_snap) + 1;
  if (num_snapshots) *num_snapshots = nsnap;

  std::vector<double> out;
  out.reserve(static_cast<size_t>(nsnap) * nx);
  auto record = [&]() {
    std::vector<cplx> w = v;
    ifft(w);
    for (int i = 0; i < nx; ++i) out.push_back(w[static_cast<size_t>(i)].real());
  };
  record();

  std::vector<cplx> a(static_cast<size_t>(nx)), b(static_cast<size_t>(nx)), c(static_cast<size_t>(nx));
  for (long step = 1; step <= total_steps; ++step) {
    std::vector<cplx> Nv = nonlinear(v);
    for (int j = 0; j < nx; ++j)
      a[static_cast<size_t>(j)] = E2[static_cast<size_t>(j)] * v[static_cast<size_t>(j)] + Q[static_cast<size_t>(j)] * Nv[static_cast<size_t>(j)];
    std::vector<cplx> Na = nonlinear(a);
    for (int j = 0; j < nx; ++j)
      b[static_cast<size_t>(j)] = E2[static_cast<size_t>(j)] * v[static_cast<size_t>(j)] + Q[static_cast<size_t>(j)] * Na[static_cast<size_t>(j)];
    std::vector<cplx> Nb = nonlinear(b);
    for (int j = 0; j < nx; ++j)
      c[static_cast<size_t>(j)] = E2[static_cast<size_t>(j)] * a[static_cast<size_t>(j)] +
                                  Q[static_cast<size_t>(j)] * (2.0 * Nb[static_cast<size_t>(j)] - Nv[static_cast<size_t>(j)]);
    std::vector<cplx> Nc = nonlinear(c);
    double vmax = 0.0;
    for (int j = 0; j < nx; ++j) {
      v[static_cast<size_t>(j)] = E[static_cast<size_t>(j)] * v[static_cast<size_t>(j)] +
                                  f1[static_cast<size_t>(j)] * Nv[static_cast<size_t>(j)] +
                                  f2[static_cast<size_t>(j)] * (Na[static_cast<size_t>(j)] + Nb[static_cast<size_t>(j)]) +
                                  f3[static_cast<size_t>(j)] * Nc[static_cast<size_t>(j)];
      vmax = std::max(vmax, std::abs(v[static_cast<size_t>(j)]));
    }
    if (vmax > 1e8) {
      fftw_destroy_plan(fwd);
      fftw_destroy_plan(bwd);
      throw std::runtime_error("solve_burgers_spectral: spectral blow-up detected");
    }
    if (step % steps_per_snap == 0) record();
  }
  fftw_destroy_plan(fwd);
  fftw_destroy_plan(bwd);
  return out;
}

// ---- Boundary curves ----------------------------------------------------------------

double sdf_circle(double r, double x, double y) {
  if (r <= 0.0) throw std::invalid_argument("sdf_circle: r > 0 required");
  return std::sqrt(x * x + y * y) - r;
}

BoundaryCurve circle_sensors(double r, int m) {
  if (m < 3) throw std::invalid_argument("circle_sensors: m >= 3 required");
  BoundaryCurve c;
  c.points.reserve(static_cast<size_t>(m) * 2);
  for (int j = 0; j < m; ++j) {
    double th = 2.0 * kPi * j / m;
    c.points.push_back(r * std::cos(th));
    c.points.push_back(r * std::sin(th));
  }
  return c;
}

namespace {

std::vector<double> resample_closed(std::span<const double> pts, int m) {
  const int n = static_cast<int>(pts.size()) / 2;
  std::vector<double> arc(static_cast<size_t>(n) + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    int j = (i + 1) % n;
    double dx = pts[static_cast<size_t>(j) * 2] - pts[static_cast<size_t>(i) * 2];
    double dy = pts[static_cast<size_t>(j) * 2 + 1] - pts[static_cast<size_t>(i) * 2 + 1];
    arc[static_cast<size_t>(i) + 1] = arc[static_cast<size_t>(i)] + std::hypot(dx, dy);
  }
  const double total = arc.back();
  std::vector<double> out;
  out.reserve(static_cast<size_t>(m) * 2);
  for (int j = 0; j < m; ++j) {
    double s = total * j / m;
    auto it = std::upper_bound(arc.begin(), arc.end(), s);
    int seg = static_cast<int>(std::clamp<long>(it - arc.begin() - 1, 0, n - 1));
    double t = (s - arc[static_cast<size_t>(seg)]) /
               std::max(arc[static_cast<size_t>(seg) + 1] - arc[static_cast<size_t>(seg)], 1e-300);
    int a = seg, b = (seg + 1) % n;
    out.push_back(pts[static_cast<size_t>(a) * 2] + t * (pts[static_cast<size_t>(b) * 2] - pts[static_cast<size_t>(a) * 2]));
    out.push_back(pts[static_cast<size_t>(a) * 2 + 1] +
                  t * (pts[static_cast<size_t>(b) * 2 + 1] - pts[static_cast<size_t>(a) * 2 + 1]));
  }
  return out;
}

}  // namespace

BoundaryCurve normalize_curve(std::vector<double> points, int m) {
  if (points.size() < 6) throw std::invalid_argument("normalize_curve: fewer than 3 points");
  std::vector<double> rs = resample_closed(points, m);
  for (int c = 0; c < 2; ++c) {
    double mean = 0.0;
    for (int i = 0; i < m; ++i) mean += rs[static_cast<size_t>(i) * 2 + c];
    mean /= m;
    double var = 0.0;
    for (int i = 0; i < m; ++i) {
      double d = rs[static_cast<size_t>(i) * 2 + c] - mean;
      var += d * d;
    }
    var /= m;
    double sd = std::sqrt(std::max(var, 1e-300));
    for (int i = 0; i < m; ++i) rs[static_cast<size_t>(i) * 2 + c] = (rs[static_cast<size_t>(i) * 2 + c] - mean) / sd;
  }
  BoundaryCurve out;
  out.points = std::move(rs);
  return out;
}

BoundaryCurve load_airfoil(const std::string& path, int m) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open airfoil file: " + path);
  std::vector<double> pts;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::istringstream ls(line);
    double x, y;
    if (ls >> x >> y) {
      pts.push_back(x);
      pts.push_back(y);
    } else {
      // Selig files carry a name header; anything else non-numeric is an error.
      std::string tok;
      std::istringstream probe(line);
      if (!(probe >> tok)) continue;  // blank line
      if (lineno == 1) continue;
      throw std::runtime_error("malformed airfoil line " + std::to_string(lineno) + " in " + path);
    }
  }
  if (pts.size() < 6)
    throw std::runtime_error("airfoil file has fewer than 3 points: " + path);
  return normalize_curve(std::move(pts), m);
}

FieldSample curve_to_sample(const BoundaryCurve& c, int64_t id) {
  FieldSample s;
  s.loc_dim = 2;
  s.locations = c.points;
  s.values = c.points;
  s.id = id;
  return s;
}

}  // namespace pidon::datagen
