// pidon: generate data, train, evaluate and predict with operator surrogates.

#include <cstdio>
#include <filesystem>
#include <random>

#include "CLI11.hpp"
#include "pidon/harness.hpp"

namespace fs = std::filesystem;
using namespace pidon;

namespace {

struct CommonArgs {
  std::string config;
  std::string out;
  long iterations = -1;
  int64_t seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool config_required) {
  auto* c = cmd->add_option("--config", a.config, "config file path");
  if (config_required) c->required();
  cmd->add_option("--out", a.out, "output directory (default runs/<benchmark>)");
  cmd->add_option("--iterations", a.iterations, "override training iteration count");
  cmd->add_option("--seed", a.seed, "override RNG seed");
}

harness::TrainConfig resolve(const CommonArgs& a) {
  harness::TrainConfig cfg = harness::load_config(a.config);
  if (a.seed >= 0) cfg.seed = static_cast<uint64_t>(a.seed);
  if (a.iterations >= 0) cfg.iterations = a.iterations;
  return cfg;
}

std::string out_dir(const CommonArgs& a, const harness::TrainConfig& cfg) {
  return a.out.empty() ? "runs/" + cfg.benchmark : a.out;
}

harness::GeneratedData load_or_generate(const harness::TrainConfig& cfg, const std::string& dir) {
  if (fs::exists(dir + "/constraints.bin")) return harness::read_data(dir);
  harness::GeneratedData data = harness::generate_data(cfg);
  harness::write_data(dir, data);
  return data;
}

int run_generate(const CommonArgs& a) {
  harness::TrainConfig cfg = resolve(a);
  const std::string dir = out_dir(a, cfg);
  harness::GeneratedData data = harness::generate_data(cfg);
  harness::write_data(dir, data);
  std::printf("generated %s: N=%lld train samples, %lld test samples -> %s\n",
              cfg.benchmark.c_str(), static_cast<long long>(data.constraints.N),
              static_cast<long long>(data.test.N), dir.c_str());
  return 0;
}

int run_train(const CommonArgs& a) {
  harness::TrainConfig cfg = resolve(a);
  const std::string dir = out_dir(a, cfg);
  harness::GeneratedData data = load_or_generate(cfg, dir);
  harness::TrainResult res = harness::train(cfg, data, dir);
  if (res.aborted) {
    std::fprintf(stderr, "training aborted on a non-finite loss; last good checkpoint kept at %s\n",
                 (dir + "/checkpoint.bin").c_str());
    return 2;
  }
  std::printf("trained %ld iterations -> %s/checkpoint.bin\n", cfg.iterations, dir.c_str());
  if (!res.metrics.empty())
    std::printf("final logged loss %.6g at iteration %ld\n", res.metrics.back().total,
                res.metrics.back().iteration);
  return 0;
}

int run_eval(const CommonArgs& a) {
  harness::TrainConfig cfg = resolve(a);
  const std::string dir = out_dir(a, cfg);
  deeponet::DeepOnetModel model = deeponet::load_checkpoint(dir + "/checkpoint.bin");
  deeponet::OperatorDataset test = deeponet::read_dataset(dir + "/test.bin");
  harness::EvalSummary s = harness::evaluate(model, test);
  std::FILE* f = std::fopen((dir + "/eval.csv").c_str(), "w");
  if (!f) throw std::runtime_error("cannot open for writing: " + dir + "/eval.csv");
  std::fprintf(f, "sample,relative_l2\n");
  for (size_t i = 0; i < s.per_sample.size(); ++i)
    std::fprintf(f, "%zu,%.17g\n", i, s.per_sample[i]);
  std::fclose(f);
  std::printf("relative L2 over %zu test samples: mean=%.17g std=%.17g\n", s.per_sample.size(),
              s.mean, s.stddev);
  return 0;
}

int run_predict(const CommonArgs& a, int sample) {
  harness::TrainConfig cfg = resolve(a);
  const std::string dir = out_dir(a, cfg);
  deeponet::DeepOnetModel model = deeponet::load_checkpoint(dir + "/checkpoint.bin");
  deeponet::OperatorDataset test = deeponet::read_dataset(dir + "/test.bin");
  if (sample < 0 || sample >= test.N) throw std::runtime_error("sample index out of range");
  const int64_t r0 = static_cast<int64_t>(sample) * test.P;
  std::span<const double> queries(test.query.data() + r0 * test.d,
                                  static_cast<size_t>(test.P) * test.d);
  std::vector<double> values = harness::predict(model, test.branch_row(r0), queries, test.d);
  harness::write_prediction_csv(dir + "/prediction.csv", queries, test.d, values);
  std::printf("wrote %d predictions for sample %d -> %s/prediction.csv\n", test.P, sample,
              dir.c_str());
  return 0;
}

// Quick gradient and solver checks, independent of any config.
int run_selftest() {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::printf("%-34s %s\n", name, ok ? "ok" : "FAIL");
    if (!ok) ++failures;
  };

  {  // reverse-mode gradient of the antiderivative loss vs central differences
    std::mt19937_64 rng(7);
    std::vector<double> grid(10);
    for (int j = 0; j < 10; ++j) grid[j] = j / 9.0;
    datagen::GrfSampler grf(grid, 0.2);
    deeponet::FieldSample u{grid, 1, grf.sample(rng), 0};
    deeponet::DeepOnetArch arch;
    arch.branch = {deeponet::Backbone::Mlp, 10, 4, 2, 4, nn::Activation::Tanh};
    arch.trunk = {deeponet::Backbone::Mlp, 1, 4, 2, 4, nn::Activation::Tanh};
    arch.q = 4;
    arch.query_dim = 1;
    deeponet::DeepOnetModel model = deeponet::make_deeponet(arch, 1.0, 0, 11);
    pde::PointBatch batch;
    pde::SamplePoints e;
    e.u = &u;
    e.cons.push_back({0.0, 0.0});
    e.cons_target.push_back(0.0);
    for (int j = 0; j < 10; ++j) {
      e.colloc.push_back({grid[j], 0.0});
      e.colloc_target.push_back(u.values[j]);
    }
    batch.entries.push_back(std::move(e));
    pde::PdeProblem prob;
    auto loss_at = [&](const std::vector<double>& th) {
      deeponet::DeepOnetModel m2 = model;
      m2.theta = th;
      return pde::composite_loss(m2, prob, batch).total;
    };
    ad::Tape tape;
    std::vector<ad::Var> theta = ad::make_leaves(tape, model.theta);
    std::span<const ad::Var> tspan(theta);
    auto factory = [&](const deeponet::FieldSample& s) {
      return pde::TapedModelEval(model, tspan, s.values);
    };
    auto loss = pde::composite_loss(prob, factory, batch);
    std::vector<double> adj = tape.reverse(loss.total.idx);
    double max_rel = 0.0;
    const double h = 1e-6;
    for (size_t i = 0; i < model.theta.size(); i += 7) {
      std::vector<double> tp = model.theta, tm = model.theta;
      tp[i] += h;
      tm[i] -= h;
      double fd = (loss_at(tp) - loss_at(tm)) / (2 * h);
      max_rel = std::max(max_rel, std::abs(adj[i] - fd) / (std::abs(fd) + 1e-8));
    }
    check("gradient vs finite differences", max_rel < 1e-5);
  }

  {  // Dormand-Prince quadrature against an analytic antiderivative; the grid
     // is dense enough that linear interpolation between sensors stays below
     // the tolerance
    std::vector<double> grid(2001), vals(2001);
    for (int j = 0; j <= 2000; ++j) {
      grid[j] = j / 2000.0;
      vals[j] = std::cos(2.0 * M_PI * grid[j]);
    }
    deeponet::FieldSample u{grid, 1, vals, 0};
    std::vector<double> s = datagen::solve_antiderivative_rk45(u);
    double err = 0.0;
    for (int j = 0; j <= 2000; ++j)
      err = std::max(err, std::abs(s[j] - std::sin(2.0 * M_PI * grid[j]) / (2.0 * M_PI)));
    check("rk45 sine antiderivative", err < 1e-5);
  }

  check("circle signed distance",
        std::abs(datagen::sdf_circle(1.0, 2.0, 0.0) - 1.0) < 1e-12 &&
            std::abs(datagen::sdf_circle(1.0, 0.0, 0.0) + 1.0) < 1e-12);

  {  // GRF sampler produces finite draws of the right size
    std::mt19937_64 rng(3);
    std::vector<double> grid(50);
    for (int j = 0; j < 50; ++j) grid[j] = j / 49.0;
    datagen::GrfSampler grf(grid, 0.2);
    std::vector<double> v = grf.sample(rng);
    bool ok = v.size() == 50;
    for (double x : v) ok = ok && std::isfinite(x);
    check("grf sampler", ok);
  }

  if (failures > 0) {
    std::fprintf(stderr, "%d selftest check(s) failed\n", failures);
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"physics-informed operator learning toolkit"};
  app.require_subcommand(1);

  CommonArgs gen_args, train_args, eval_args, pred_args;
  int pred_sample = 0;

  add_common(app.add_subcommand("generate", "generate benchmark datasets"), gen_args, true);
  add_common(app.add_subcommand("train", "train an operator surrogate"), train_args, true);
  add_common(app.add_subcommand("eval", "evaluate a checkpoint on the test set"), eval_args, true);
  CLI::App* pred = app.add_subcommand("predict", "predict a full field for one test sample");
  add_common(pred, pred_args, true);
  pred->add_option("--sample", pred_sample, "test sample index");
  app.add_subcommand("selftest", "run gradient and solver oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("generate")) return run_generate(gen_args);
    if (app.got_subcommand("train")) return run_train(train_args);
    if (app.got_subcommand("eval")) return run_eval(eval_args);
    if (app.got_subcommand("predict")) return run_predict(pred_args, pred_sample);
    if (app.got_subcommand("selftest")) return run_selftest();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
