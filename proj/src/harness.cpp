#include "pidon/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pidon::harness {

namespace fs = std::filesystem;

// ---- Configuration ----------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

struct KeyRef {
  enum Kind { Str, Int, Long, U64, Dbl } kind;
  void* ptr;
};

// One table drives both parse and serialize so the two cannot drift apart.
std::vector<std::pair<std::string, KeyRef>> key_table(TrainConfig& c) {
  return {
      {"problem.benchmark", {KeyRef::Str, &c.benchmark}},
      {"problem.D", {KeyRef::Dbl, &c.D}},
      {"problem.k", {KeyRef::Dbl, &c.k}},
      {"problem.nu", {KeyRef::Dbl, &c.nu}},
      {"problem.lambda_ic", {KeyRef::Dbl, &c.lambda_ic}},
      {"data.N", {KeyRef::Int, &c.N}},
      {"data.m", {KeyRef::Int, &c.m}},
      {"data.P", {KeyRef::Int, &c.P}},
      {"data.Q", {KeyRef::Int, &c.Q}},
      {"data.N_test", {KeyRef::Int, &c.N_test}},
      {"data.P_test", {KeyRef::Int, &c.P_test}},
      {"data.length_scale", {KeyRef::Dbl, &c.length_scale}},
      {"data.radius_lo", {KeyRef::Dbl, &c.radius_lo}},
      {"data.radius_hi", {KeyRef::Dbl, &c.radius_hi}},
      {"data.box_lo", {KeyRef::Dbl, &c.box_lo}},
      {"data.box_hi", {KeyRef::Dbl, &c.box_hi}},
      {"model.backbone", {KeyRef::Str, &c.arch.backbone}},
      {"model.width", {KeyRef::Int, &c.arch.width}},
      {"model.depth", {KeyRef::Int, &c.arch.depth}},
      {"model.latent", {KeyRef::Int, &c.arch.latent}},
      {"model.activation", {KeyRef::Str, &c.arch.activation}},
      {"model.fourier_m", {KeyRef::Int, &c.arch.fourier_m}},
      {"model.fourier_sigma", {KeyRef::Dbl, &c.arch.fourier_sigma}},
      {"training.iterations", {KeyRef::Long, &c.iterations}},
      {"training.base_lr", {KeyRef::Dbl, &c.base_lr}},
      {"training.batch_size", {KeyRef::Int, &c.batch_size}},
      {"training.batch_samples", {KeyRef::Int, &c.batch_samples}},
      {"training.mode", {KeyRef::Str, &c.mode}},
      {"training.seed", {KeyRef::U64, &c.seed}},
      {"training.metrics_every", {KeyRef::Int, &c.metrics_every}},
  };
}

void assign(const KeyRef& ref, const std::string& key, const std::string& value) {
  try {
    switch (ref.kind) {
      case KeyRef::Str: *static_cast<std::string*>(ref.ptr) = value; return;
      case KeyRef::Int: *static_cast<int*>(ref.ptr) = std::stoi(value); return;
      case KeyRef::Long: *static_cast<long*>(ref.ptr) = std::stol(value); return;
      case KeyRef::U64: *static_cast<uint64_t*>(ref.ptr) = std::stoull(value); return;
      case KeyRef::Dbl: *static_cast<double*>(ref.ptr) = std::stod(value); return;
    }
  } catch (const std::exception&) {
    throw std::invalid_argument("bad value for config key " + key + ": " + value);
  }
}

std::string format(const KeyRef& ref) {
  switch (ref.kind) {
    case KeyRef::Str: return *static_cast<std::string*>(ref.ptr);
    case KeyRef::Int: return std::to_string(*static_cast<int*>(ref.ptr));
    case KeyRef::Long: return std::to_string(*static_cast<long*>(ref.ptr));
    case KeyRef::U64: return std::to_string(*static_cast<uint64_t*>(ref.ptr));
    case KeyRef::Dbl: return fmt_double(*static_cast<double*>(ref.ptr));
  }
  return "";
}

}  // namespace

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  auto table = key_table(cfg);
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (size_t h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw std::invalid_argument("config line " + std::to_string(lineno) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    std::string key = section.empty() ? trim(line.substr(0, eq)) : section + "." + trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    auto it = std::find_if(table.begin(), table.end(), [&](const auto& e) { return e.first == key; });
    if (it == table.end())
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": unknown key " + key);
    assign(it->second, key, value);
  }
  return cfg;
}

std::string serialize_config(const TrainConfig& cfg) {
  auto table = key_table(const_cast<TrainConfig&>(cfg));
  std::string out, section;
  for (const auto& [key, ref] : table) {
    size_t dot = key.find('.');
    std::string sec = key.substr(0, dot);
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += key.substr(dot + 1) + " = " + format(ref) + "\n";
  }
  return out;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

pde::PdeProblem problem_from(const TrainConfig& cfg) {
  pde::PdeProblem p;
  p.kind = pde::pde_kind_from_string(cfg.benchmark);
  p.D = cfg.D;
  p.k = cfg.k;
  p.nu = cfg.nu;
  p.lambda_ic = cfg.lambda_ic;
  p.colloc = {cfg.Q, cfg.P};
  p.box_lo = cfg.box_lo;
  p.box_hi = cfg.box_hi;
  return p;
}

// ---- Data generation ----------------------------------------------------------

namespace {

using deeponet::QueryPoint;
using QueryList = std::vector<std::pair<QueryPoint, std::optional<double>>>;

deeponet::OperatorDataset build(std::span<const FieldSample> samples,
                                std::span<const QueryList> queries) {
  return deeponet::assemble_dataset(samples, queries);
}

GeneratedData generate_antiderivative(const TrainConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> grid(cfg.m);
  for (int j = 0; j < cfg.m; ++j) grid[j] = static_cast<double>(j) / (cfg.m - 1);
  datagen::GrfSampler grf(grid, cfg.length_scale);

  std::vector<FieldSample> train(cfg.N), test(cfg.N_test);
  for (int i = 0; i < cfg.N; ++i) train[i] = {grid, 1, grf.sample(rng), i};
  for (int i = 0; i < cfg.N_test; ++i) test[i] = {grid, 1, grf.sample(rng), i};

  std::vector<QueryList> cons(cfg.N), colloc(cfg.N), testq(cfg.N_test);
  std::uniform_int_distribution<int> dj(0, cfg.m - 1);
  for (int i = 0; i < cfg.N; ++i) {
    cons[i].push_back({{{0.0}}, 0.0});
    if (cfg.Q == cfg.m) {
      for (int j = 0; j < cfg.m; ++j) colloc[i].push_back({{{grid[j]}}, train[i].values[j]});
    } else {
      for (int r = 0; r < cfg.Q; ++r) {
        int j = dj(rng);
        colloc[i].push_back({{{grid[j]}}, train[i].values[j]});
      }
    }
  }
  for (int i = 0; i < cfg.N_test; ++i) {
    std::vector<double> s = datagen::solve_antiderivative_rk45(test[i]);
    for (int j = 0; j < cfg.m; ++j) testq[i].push_back({{{grid[j]}}, s[j]});
  }
  return {build(train, cons), build(train, colloc), build(test, testq), std::nullopt};
}

GeneratedData generate_diffusion_reaction(const TrainConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> grid(cfg.m);
  for (int j = 0; j < cfg.m; ++j) grid[j] = static_cast<double>(j) / (cfg.m - 1);
  datagen::GrfSampler grf(grid, cfg.length_scale);

  std::vector<FieldSample> train(cfg.N), test(cfg.N_test);
  for (int i = 0; i < cfg.N; ++i) train[i] = {grid, 1, grf.sample(rng), i};
  for (int i = 0; i < cfg.N_test; ++i) test[i] = {grid, 1, grf.sample(rng), i};

  std::vector<QueryList> cons(cfg.N), colloc(cfg.N), testq(cfg.N_test);
  std::uniform_int_distribution<int> edge(0, 2), dj(0, cfg.m - 1);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < cfg.N; ++i) {
    for (int r = 0; r < cfg.P; ++r) {
      switch (edge(rng)) {
        case 0: cons[i].push_back({{{u01(rng), 0.0}}, 0.0}); break;  // initial condition
        case 1: cons[i].push_back({{{0.0, u01(rng)}}, 0.0}); break;
        default: cons[i].push_back({{{1.0, u01(rng)}}, 0.0}); break;
      }
    }
    for (int r = 0; r < cfg.Q; ++r) {
      int j = dj(rng);
      colloc[i].push_back({{{grid[j], u01(rng)}}, train[i].values[j]});
    }
  }
  const int nx = cfg.m, nt = cfg.m;
  std::uniform_int_distribution<int> dix(0, nx - 1), dit(0, nt - 1);
  for (int i = 0; i < cfg.N_test; ++i) {
    std::vector<double> s = datagen::solve_diffusion_reaction(test[i], cfg.D, cfg.k, nx, nt);
    for (int r = 0; r < cfg.P_test; ++r) {
      int ix = dix(rng), it = dit(rng);
      testq[i].push_back({{{grid[ix], static_cast<double>(it) / (nt - 1)}}, s[static_cast<size_t>(it) * nx + ix]});
    }
  }
  return {build(train, cons), build(train, colloc), build(test, testq), std::nullopt};
}

GeneratedData generate_burgers(const TrainConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  const int nx = 128;          // solver grid
  const double dt = 1e-3, snap = 0.01;
  std::vector<double> both(static_cast<size_t>(cfg.m) + nx);
  for (int j = 0; j < cfg.m; ++j) both[static_cast<size_t>(j)] = static_cast<double>(j) / cfg.m;
  for (int j = 0; j < nx; ++j) both[static_cast<size_t>(cfg.m) + j] = static_cast<double>(j) / nx;
  std::vector<double> sensors(both.begin(), both.begin() + cfg.m);
  datagen::PeriodicGrfSpec spec;

  // One coefficient draw evaluated on sensors and on the solver grid.
  auto draw = [&](std::vector<double>& on_sensors, std::vector<double>& on_solver) {
    std::vector<double> v = datagen::periodic_grf_sample(spec, both, rng);
    on_sensors.assign(v.begin(), v.begin() + cfg.m);
    on_solver.assign(v.begin() + cfg.m, v.end());
  };

  std::vector<FieldSample> train(cfg.N), test(cfg.N_test);
  std::vector<std::vector<double>> test_solver(cfg.N_test);
  std::vector<double> tmp;
  for (int i = 0; i < cfg.N; ++i) {
    draw(train[i].values, tmp);
    train[i].locations = sensors;
    train[i].id = i;
  }
  for (int i = 0; i < cfg.N_test; ++i) {
    draw(test[i].values, test_solver[i]);
    test[i].locations = sensors;
    test[i].id = i;
  }

  std::vector<QueryList> cons(cfg.N), colloc(cfg.N), bcq(cfg.N), testq(cfg.N_test);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int i = 0; i < cfg.N; ++i) {
    for (int j = 0; j < cfg.m; ++j) cons[i].push_back({{{sensors[j], 0.0}}, train[i].values[j]});
    for (int r = 0; r < cfg.P; ++r) bcq[i].push_back({{{u01(rng)}}, 0.0});
    for (int r = 0; r < cfg.Q; ++r) colloc[i].push_back({{{u01(rng), u01(rng)}}, 0.0});
  }
  std::uniform_int_distribution<int> dix(0, nx - 1);
  for (int i = 0; i < cfg.N_test; ++i) {
    int nsnap = 0;
    std::vector<double> s = datagen::solve_burgers_spectral(test_solver[i], cfg.nu, nx, dt, snap, &nsnap);
    std::uniform_int_distribution<int> dis(0, nsnap - 1);
    for (int r = 0; r < cfg.P_test; ++r) {
      int ix = dix(rng), is = dis(rng);
      testq[i].push_back(
          {{{static_cast<double>(ix) / nx, is * snap}}, s[static_cast<size_t>(is) * nx + ix]});
    }
  }
  return {build(train, cons), build(train, colloc), build(test, testq), build(train, bcq)};
}

GeneratedData generate_eikonal(const TrainConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> dr(cfg.radius_lo, cfg.radius_hi);
  std::uniform_real_distribution<double> dbox(cfg.box_lo, cfg.box_hi);

  std::vector<FieldSample> train(cfg.N), test(cfg.N_test);
  std::vector<double> train_r(cfg.N), test_r(cfg.N_test);
  for (int i = 0; i < cfg.N; ++i) {
    train_r[i] = dr(rng);
    train[i] = datagen::curve_to_sample(datagen::circle_sensors(train_r[i], cfg.m), i);
  }
  for (int i = 0; i < cfg.N_test; ++i) {
    test_r[i] = dr(rng);
    test[i] = datagen::curve_to_sample(datagen::circle_sensors(test_r[i], cfg.m), i);
  }

  // The boundary pool is the full sensor set of each curve with target 0.
  std::vector<QueryList> cons(cfg.N), colloc(cfg.N), testq(cfg.N_test);
  for (int i = 0; i < cfg.N; ++i) {
    for (int j = 0; j < cfg.m; ++j) {
      double th = 2.0 * M_PI * j / cfg.m;
      cons[i].push_back({{{train_r[i] * std::cos(th), train_r[i] * std::sin(th)}}, 0.0});
    }
    for (int r = 0; r < cfg.Q; ++r) colloc[i].push_back({{{dbox(rng), dbox(rng)}}, 0.0});
  }
  for (int i = 0; i < cfg.N_test; ++i)
    for (int r = 0; r < cfg.P_test; ++r) {
      double x = dbox(rng), y = dbox(rng);
      testq[i].push_back({{{x, y}}, datagen::sdf_circle(test_r[i], x, y)});
    }
  return {build(train, cons), build(train, colloc), build(test, testq), std::nullopt};
}

}  // namespace

GeneratedData generate_data(const TrainConfig& cfg) {
  switch (pde::pde_kind_from_string(cfg.benchmark)) {
    case pde::PdeKind::Antiderivative: return generate_antiderivative(cfg);
    case pde::PdeKind::DiffusionReaction: return generate_diffusion_reaction(cfg);
    case pde::PdeKind::Burgers: return generate_burgers(cfg);
    case pde::PdeKind::Eikonal: return generate_eikonal(cfg);
  }
  throw std::logic_error("generate_data: bad kind");
}

void write_data(const std::string& dir, const GeneratedData& data) {
  fs::create_directories(dir);
  deeponet::write_dataset(dir + "/constraints.bin", data.constraints);
  deeponet::write_dataset(dir + "/collocation.bin", data.collocation);
  deeponet::write_dataset(dir + "/test.bin", data.test);
  if (data.bc) deeponet::write_dataset(dir + "/bc.bin", *data.bc);
}

GeneratedData read_data(const std::string& dir) {
  GeneratedData data;
  data.constraints = deeponet::read_dataset(dir + "/constraints.bin");
  data.collocation = deeponet::read_dataset(dir + "/collocation.bin");
  data.test = deeponet::read_dataset(dir + "/test.bin");
  if (fs::exists(dir + "/bc.bin")) data.bc = deeponet::read_dataset(dir + "/bc.bin");
  return data;
}

// ---- Mini-batching ------------------------------------------------------------

namespace {
uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::mt19937_64 iter_rng(uint64_t seed, long iter) {
  return std::mt19937_64(splitmix64(seed ^ splitmix64(static_cast<uint64_t>(iter))));
}

Minibatch sample_minibatch(int64_t cons_rows, int64_t colloc_rows, int batch_size,
                           std::mt19937_64& rng) {
  if (cons_rows <= 0 || colloc_rows <= 0)
    throw std::invalid_argument("sample_minibatch: empty pool");
  if (batch_size < 2) throw std::invalid_argument("sample_minibatch: batch_size must be >= 2");
  const double frac = static_cast<double>(cons_rows) / static_cast<double>(cons_rows + colloc_rows);
  int n_cons = static_cast<int>(std::llround(batch_size * frac));
  n_cons = std::clamp(n_cons, 1, batch_size - 1);
  Minibatch mb;
  std::uniform_int_distribution<int64_t> dc(0, cons_rows - 1), dr(0, colloc_rows - 1);
  mb.cons.reserve(static_cast<size_t>(n_cons));
  mb.colloc.reserve(static_cast<size_t>(batch_size - n_cons));
  for (int i = 0; i < n_cons; ++i) mb.cons.push_back(dc(rng));
  for (int i = 0; i < batch_size - n_cons; ++i) mb.colloc.push_back(dr(rng));
  return mb;
}

// ---- Training -----------------------------------------------------------------

void write_metrics_csv(const std::string& path, std::span<const MetricsRecord> records) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  std::fprintf(f, "iteration,total,ic,bc,physics,operator,lr,wall_seconds\n");
  for (const MetricsRecord& r : records)
    std::fprintf(f, "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iteration, r.total, r.ic,
                 r.bc, r.physics, r.op, r.lr, r.wall_seconds);
  std::fclose(f);
}

namespace {

deeponet::DeepOnetModel init_model(const TrainConfig& cfg, const GeneratedData& data) {
  deeponet::DeepOnetArch arch;
  deeponet::Backbone bk = deeponet::backbone_from_string(cfg.arch.backbone);
  nn::Activation act = nn::activation_from_string(cfg.arch.activation);
  arch.branch = {bk, data.constraints.m, cfg.arch.width, cfg.arch.depth, cfg.arch.latent, act};
  arch.trunk = {bk, data.constraints.d, cfg.arch.width, cfg.arch.depth, cfg.arch.latent, act};
  arch.q = cfg.arch.latent;
  arch.query_dim = data.constraints.d;
  return deeponet::make_deeponet(arch, cfg.arch.fourier_sigma, cfg.arch.fourier_m, cfg.seed);
}

double term_value(const std::optional<ad::Var>& t) { return t ? t->val : 0.0; }

}  // namespace

TrainResult train(const TrainConfig& cfg, const GeneratedData& data, const std::string& out_dir) {
  const pde::PdeProblem prob = problem_from(cfg);
  const bool physics = cfg.mode != "operator";
  const OperatorDataset& C = data.constraints;
  const OperatorDataset& R = data.collocation;
  if (C.N != R.N) throw std::invalid_argument("train: constraint/collocation sample counts differ");
  const int N = static_cast<int>(C.N);
  const int P = C.P, Q = R.P;
  const int Pbc = data.bc ? data.bc->P : 0;
  std::vector<FieldSample> samples = deeponet::dataset_samples(C);

  deeponet::DeepOnetModel model = init_model(cfg, data);
  nn::AdamState adam = nn::make_adam(model.theta.size(), cfg.base_lr);

  fs::create_directories(out_dir);
  TrainResult result;
  result.metrics.reserve(static_cast<size_t>(cfg.iterations / std::max(1, cfg.metrics_every)) + 1);

  ad::Tape tape;
  std::vector<double> adj;
  pde::TrunkCache cache;
  const auto t0 = std::chrono::steady_clock::now();

  for (long it = 0; it < cfg.iterations; ++it) {
    std::mt19937_64 rng = iter_rng(cfg.seed, it);

    std::vector<int> sel(static_cast<size_t>(std::min(cfg.batch_samples, N)));
    std::uniform_int_distribution<int> ds(0, N - 1);
    for (int& s : sel) s = ds(rng);
    std::sort(sel.begin(), sel.end());
    sel.erase(std::unique(sel.begin(), sel.end()), sel.end());
    const int S = static_cast<int>(sel.size());

    // Proportional with-replacement draw over the row pools of the selected
    // samples; boundary-time rows count as constraint rows.
    Minibatch mb;
    if (physics) {
      mb = sample_minibatch(static_cast<int64_t>(S) * (P + Pbc), static_cast<int64_t>(S) * Q,
                            cfg.batch_size, rng);
    } else {
      std::uniform_int_distribution<int64_t> dc(0, static_cast<int64_t>(S) * P - 1);
      for (int i = 0; i < cfg.batch_size; ++i) mb.cons.push_back(dc(rng));
    }

    const int cons_stride = physics ? P + Pbc : P;
    std::vector<pde::SamplePoints> pts(static_cast<size_t>(S));
    for (int64_t r : mb.cons) {
      const int sl = static_cast<int>(r / cons_stride);
      const int j = static_cast<int>(r % cons_stride);
      pde::SamplePoints& e = pts[static_cast<size_t>(sl)];
      if (j < P) {
        const int64_t g = static_cast<int64_t>(sel[static_cast<size_t>(sl)]) * P + j;
        auto q = C.query_row(g);
        std::array<double, 2> y{q[0], C.d > 1 ? q[1] : 0.0};
        e.cons.push_back(y);
        e.cons_target.push_back(C.target[static_cast<size_t>(g)]);
      } else {
        const int64_t g = static_cast<int64_t>(sel[static_cast<size_t>(sl)]) * Pbc + (j - P);
        e.bc_t.push_back(data.bc->query_row(g)[0]);
      }
    }
    for (int64_t r : mb.colloc) {
      const int sl = static_cast<int>(r / Q);
      const int j = static_cast<int>(r % Q);
      const int64_t g = static_cast<int64_t>(sel[static_cast<size_t>(sl)]) * Q + j;
      pde::SamplePoints& e = pts[static_cast<size_t>(sl)];
      auto q = R.query_row(g);
      e.colloc.push_back({q[0], R.d > 1 ? q[1] : 0.0});
      e.colloc_target.push_back(R.has_targets ? R.target[static_cast<size_t>(g)] : 0.0);
    }
    // The Burgers loss averages IC and BC pools separately; make sure neither
    // comes up empty in a proportional draw.
    if (physics && Pbc > 0) {
      bool any_ic = false, any_bc = false;
      for (const pde::SamplePoints& e : pts) {
        any_ic = any_ic || !e.cons.empty();
        any_bc = any_bc || !e.bc_t.empty();
      }
      if (!any_ic) {
        auto q = C.query_row(static_cast<int64_t>(sel[0]) * P);
        pts[0].cons.push_back({q[0], C.d > 1 ? q[1] : 0.0});
        pts[0].cons_target.push_back(C.target[static_cast<size_t>(sel[0]) * P]);
      }
      if (!any_bc) pts[0].bc_t.push_back(data.bc->query_row(static_cast<int64_t>(sel[0]) * Pbc)[0]);
    }

    pde::PointBatch batch;
    for (int sl = 0; sl < S; ++sl) {
      pde::SamplePoints& e = pts[static_cast<size_t>(sl)];
      if (e.cons.empty() && e.colloc.empty() && e.bc_t.empty()) continue;
      e.u = &samples[static_cast<size_t>(sel[static_cast<size_t>(sl)])];
      batch.entries.push_back(std::move(e));
    }

    tape.clear();
    cache.clear();
    std::vector<ad::Var> theta = ad::make_leaves(tape, model.theta);
    std::span<const ad::Var> tspan(theta);
    auto factory = [&](const FieldSample& u) {
      return pde::TapedModelEval(model, tspan, u.values, &cache);
    };

    bool ok = true;
    pde::LossTerms<ad::Var> loss;
    try {
      loss = physics ? pde::composite_loss(prob, factory, batch)
                     : pde::operator_only_loss(factory, batch, C.d);
      if (!std::isfinite(loss.total.val)) ok = false;
    } catch (const std::exception&) {
      ok = false;
    }

    std::vector<double> grads;
    if (ok) {
      adj.assign(tape.num_nodes(), 0.0);
      tape.reverse_into(loss.total.idx, adj);
      grads.assign(adj.begin(), adj.begin() + static_cast<long>(model.theta.size()));
      for (double g : grads)
        if (!std::isfinite(g)) {
          ok = false;
          break;
        }
    }
    if (!ok) {
      result.aborted = true;  // keep the last good parameters
      break;
    }

    if (it % std::max(1, cfg.metrics_every) == 0) {
      MetricsRecord rec;
      rec.iteration = it;
      rec.ic = term_value(loss.ic);
      rec.bc = term_value(loss.bc);
      rec.physics = term_value(loss.physics);
      rec.op = term_value(loss.op);
      rec.total = loss.total.val;
      rec.lr = nn::lr_schedule(cfg.base_lr, it);
      rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.metrics.push_back(rec);
    }

    model.theta = nn::adam_step(adam, model.theta, grads, it);
  }

  write_metrics_csv(out_dir + "/metrics.csv", result.metrics);
  deeponet::save_checkpoint(out_dir + "/checkpoint.bin", model);
  result.model = std::move(model);
  return result;
}

// ---- Evaluation and prediction -------------------------------------------------

EvalSummary evaluate(const DeepOnetModel& model, const OperatorDataset& test) {
  if (!test.has_targets) throw std::invalid_argument("evaluate: test set has no targets");
  if (test.d != model.arch.query_dim)
    throw std::invalid_argument("evaluate: query dimension does not match the checkpoint");
  EvalSummary out;
  std::vector<double> pred(static_cast<size_t>(test.P)), truth(static_cast<size_t>(test.P));
  for (int64_t r0 = 0; r0 < test.rows(); r0 += test.P) {
    pde::ModelEval g(model, test.branch_row(r0));
    for (int j = 0; j < test.P; ++j) {
      pred[static_cast<size_t>(j)] = g.value(test.query_row(r0 + j));
      truth[static_cast<size_t>(j)] = test.target[static_cast<size_t>(r0 + j)];
    }
    out.per_sample.push_back(deeponet::relative_l2(pred, truth));
  }
  const double n = static_cast<double>(out.per_sample.size());
  for (double e : out.per_sample) out.mean += e;
  out.mean /= n;
  for (double e : out.per_sample) out.stddev += (e - out.mean) * (e - out.mean);
  out.stddev = n > 1 ? std::sqrt(out.stddev / (n - 1)) : 0.0;
  return out;
}

std::vector<double> predict(const DeepOnetModel& model, std::span<const double> u,
                            std::span<const double> queries, int d) {
  if (d != model.arch.query_dim)
    throw std::invalid_argument("predict: query dimension does not match the checkpoint");
  if (queries.size() % static_cast<size_t>(d) != 0)
    throw std::invalid_argument("predict: query buffer is not a multiple of d");
  pde::ModelEval g(model, u);
  const size_t n = queries.size() / static_cast<size_t>(d);
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = g.value(queries.subspan(i * static_cast<size_t>(d), static_cast<size_t>(d)));
  return out;
}

void write_prediction_csv(const std::string& path, std::span<const double> queries, int d,
                          std::span<const double> values) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  std::fprintf(f, "# P=%zu d=%d\n", values.size(), d);
  for (int j = 0; j < d; ++j) std::fprintf(f, "y%d,", j);
  std::fprintf(f, "value\n");
  for (size_t i = 0; i < values.size(); ++i) {
    for (int j = 0; j < d; ++j)
      std::fprintf(f, "%.17g,", queries[i * static_cast<size_t>(d) + static_cast<size_t>(j)]);
    std::fprintf(f, "%.17g\n", values[i]);
  }
  std::fclose(f);
}

}  // namespace pidon::harness
