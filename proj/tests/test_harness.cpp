#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "pidon/harness.hpp"

using namespace pidon;
using harness::GeneratedData;
using harness::TrainConfig;

namespace fs = std::filesystem;

namespace {

TrainConfig tiny_antiderivative() {
  TrainConfig cfg;
  cfg.benchmark = "antiderivative";
  cfg.N = 8;
  cfg.m = 10;
  cfg.P = 1;
  cfg.Q = 10;
  cfg.N_test = 2;
  cfg.arch.width = 8;
  cfg.arch.depth = 2;
  cfg.arch.latent = 8;
  cfg.iterations = 300;
  cfg.batch_size = 32;
  cfg.batch_samples = 4;
  cfg.metrics_every = 50;
  cfg.seed = 7;
  return cfg;
}

std::string tmpdir(const std::string& name) {
  std::string d = (fs::temp_directory_path() / name).string();
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("config serialize/parse round trip") {
  TrainConfig cfg;
  cfg.benchmark = "burgers";
  cfg.nu = 0.03;
  cfg.lambda_ic = 20.0;
  cfg.N = 17;
  cfg.m = 101;
  cfg.P = 3;
  cfg.Q = 55;
  cfg.N_test = 4;
  cfg.P_test = 11;
  cfg.length_scale = 0.31;
  cfg.radius_lo = 0.6;
  cfg.radius_hi = 1.4;
  cfg.box_lo = -1.5;
  cfg.box_hi = 1.5;
  cfg.arch.backbone = "modified_mlp";
  cfg.arch.width = 40;
  cfg.arch.depth = 5;
  cfg.arch.latent = 24;
  cfg.arch.activation = "elu";
  cfg.arch.fourier_m = 16;
  cfg.arch.fourier_sigma = 2.5;
  cfg.iterations = 12345;
  cfg.base_lr = 7e-4;
  cfg.batch_size = 99;
  cfg.batch_samples = 5;
  cfg.mode = "operator";
  cfg.seed = 424242;
  cfg.metrics_every = 13;
  CHECK(harness::parse_config(harness::serialize_config(cfg)) == cfg);
}

TEST_CASE("config parsing details and errors") {
  TrainConfig got = harness::parse_config(
      "# leading comment\n"
      "[data]\n"
      "  N = 3   # trailing comment\n"
      "\n"
      "[training]\n"
      "seed = 99\n");
  CHECK(got.N == 3);
  CHECK(got.seed == 99);
  CHECK(got.m == TrainConfig{}.m);  // untouched keys keep defaults

  CHECK_THROWS_WITH_AS((void)harness::parse_config("[data]\nbogus = 1\n"),
                       doctest::Contains("line 2"), std::invalid_argument);
  CHECK_THROWS_WITH_AS((void)harness::parse_config("[data]\nN = notanumber\n"),
                       doctest::Contains("bad value"), std::invalid_argument);
  CHECK_THROWS_WITH_AS((void)harness::parse_config("[data\nN = 1\n"),
                       doctest::Contains("unterminated"), std::invalid_argument);
  CHECK_THROWS_WITH_AS((void)harness::parse_config("[data]\njust a line\n"),
                       doctest::Contains("expected key"), std::invalid_argument);
  CHECK_THROWS_AS((void)harness::load_config("/nonexistent/config.ini"), std::runtime_error);
}

TEST_CASE("problem_from maps config fields") {
  TrainConfig cfg;
  cfg.benchmark = "diffusion_reaction";
  cfg.D = 0.02;
  cfg.k = 0.05;
  cfg.P = 7;
  cfg.Q = 9;
  pde::PdeProblem p = harness::problem_from(cfg);
  CHECK(p.kind == pde::PdeKind::DiffusionReaction);
  CHECK(p.D == 0.02);
  CHECK(p.k == 0.05);
  CHECK(p.colloc.P == 7);
  CHECK(p.colloc.Q == 9);
}

TEST_CASE("iter_rng is a deterministic function of seed and iteration") {
  std::mt19937_64 a = harness::iter_rng(5, 10), b = harness::iter_rng(5, 10);
  CHECK(a() == b());
  CHECK(a() == b());
  std::mt19937_64 c = harness::iter_rng(5, 11), d = harness::iter_rng(6, 10);
  std::mt19937_64 e = harness::iter_rng(5, 10);
  CHECK(c() != e());
  std::mt19937_64 f = harness::iter_rng(5, 10);
  CHECK(d() != f());
}

TEST_CASE("sample_minibatch proportional split") {
  std::mt19937_64 rng(1);
  harness::Minibatch mb = harness::sample_minibatch(100, 900, 1000, rng);
  CHECK(mb.cons.size() == 100);
  CHECK(mb.colloc.size() == 900);
  for (int64_t r : mb.cons) {
    CHECK(r >= 0);
    CHECK(r < 100);
  }
  for (int64_t r : mb.colloc) {
    CHECK(r >= 0);
    CHECK(r < 900);
  }

  // a tiny pool still contributes at least one row
  std::mt19937_64 rng2(2);
  harness::Minibatch small = harness::sample_minibatch(1, 1000000, 10, rng2);
  CHECK(small.cons.size() == 1);
  CHECK(small.colloc.size() == 9);
  std::mt19937_64 rng3(3);
  harness::Minibatch big = harness::sample_minibatch(1000000, 1, 10, rng3);
  CHECK(big.colloc.size() == 1);

  // deterministic given the rng state
  std::mt19937_64 r1(42), r2(42);
  harness::Minibatch m1 = harness::sample_minibatch(50, 150, 20, r1);
  harness::Minibatch m2 = harness::sample_minibatch(50, 150, 20, r2);
  CHECK(m1.cons == m2.cons);
  CHECK(m1.colloc == m2.colloc);

  std::mt19937_64 r3(4);
  CHECK_THROWS_AS((void)harness::sample_minibatch(0, 10, 10, r3), std::invalid_argument);
  CHECK_THROWS_AS((void)harness::sample_minibatch(10, 0, 10, r3), std::invalid_argument);
  CHECK_THROWS_AS((void)harness::sample_minibatch(10, 10, 1, r3), std::invalid_argument);
}

TEST_CASE("generate_data shapes: antiderivative") {
  TrainConfig cfg = tiny_antiderivative();
  GeneratedData d = harness::generate_data(cfg);
  CHECK(d.constraints.N == cfg.N);
  CHECK(d.constraints.P == 1);
  CHECK(d.constraints.m == cfg.m);
  CHECK(d.constraints.d == 1);
  CHECK(d.constraints.has_targets);
  for (int64_t r = 0; r < d.constraints.rows(); ++r) {
    CHECK(d.constraints.query_row(r)[0] == 0.0);
    CHECK(d.constraints.target[static_cast<size_t>(r)] == 0.0);
  }
  CHECK(d.collocation.P == cfg.Q);
  // with Q == m the collocation targets are the sensor values in order
  for (int i = 0; i < cfg.N; ++i)
    for (int j = 0; j < cfg.m; ++j) {
      int64_t r = static_cast<int64_t>(i) * cfg.Q + j;
      CHECK(d.collocation.target[static_cast<size_t>(r)] ==
            d.collocation.branch_row(r)[static_cast<size_t>(j)]);
    }
  CHECK(d.test.N == cfg.N_test);
  CHECK(d.test.P == cfg.m);
  CHECK(d.test.has_targets);
  CHECK(!d.bc.has_value());
  // first test target is s(0) = 0
  CHECK(d.test.target[0] == 0.0);
}

TEST_CASE("generate_data shapes: diffusion-reaction") {
  TrainConfig cfg;
  cfg.benchmark = "diffusion_reaction";
  cfg.N = 3;
  cfg.m = 12;
  cfg.P = 4;
  cfg.Q = 5;
  cfg.N_test = 2;
  cfg.P_test = 6;
  GeneratedData d = harness::generate_data(cfg);
  CHECK(d.constraints.N == 3);
  CHECK(d.constraints.P == 4);
  CHECK(d.constraints.d == 2);
  for (int64_t r = 0; r < d.constraints.rows(); ++r) {
    auto q = d.constraints.query_row(r);
    bool on_edge = q[1] == 0.0 || q[0] == 0.0 || q[0] == 1.0;
    CHECK(on_edge);
    CHECK(d.constraints.target[static_cast<size_t>(r)] == 0.0);
  }
  CHECK(d.collocation.P == 5);
  for (int64_t r = 0; r < d.collocation.rows(); ++r) {
    auto q = d.collocation.query_row(r);
    // collocation x sits on the sensor grid so u(x) is exact
    double scaled = q[0] * (cfg.m - 1);
    CHECK(std::abs(scaled - std::round(scaled)) < 1e-12);
    CHECK(q[1] >= 0.0);
    CHECK(q[1] <= 1.0);
  }
  CHECK(d.test.N == 2);
  CHECK(d.test.P == cfg.P_test);
  for (double t : d.test.target) CHECK(std::isfinite(t));
}

TEST_CASE("generate_data shapes: burgers") {
  TrainConfig cfg;
  cfg.benchmark = "burgers";
  cfg.N = 2;
  cfg.m = 16;
  cfg.P = 3;
  cfg.Q = 4;
  cfg.N_test = 1;
  cfg.P_test = 5;
  cfg.nu = 0.05;
  GeneratedData d = harness::generate_data(cfg);
  // initial-condition rows cover every sensor
  CHECK(d.constraints.N == 2);
  CHECK(d.constraints.P == cfg.m);
  CHECK(d.constraints.d == 2);
  for (int i = 0; i < cfg.N; ++i)
    for (int j = 0; j < cfg.m; ++j) {
      int64_t r = static_cast<int64_t>(i) * cfg.m + j;
      auto q = d.constraints.query_row(r);
      CHECK(q[0] == doctest::Approx(static_cast<double>(j) / cfg.m));
      CHECK(q[1] == 0.0);
      CHECK(d.constraints.target[static_cast<size_t>(r)] ==
            d.constraints.branch_row(r)[static_cast<size_t>(j)]);
    }
  REQUIRE(d.bc.has_value());
  CHECK(d.bc->N == 2);
  CHECK(d.bc->P == cfg.P);
  CHECK(d.bc->d == 1);
  for (int64_t r = 0; r < d.bc->rows(); ++r) {
    CHECK(d.bc->query_row(r)[0] >= 0.0);
    CHECK(d.bc->query_row(r)[0] < 1.0);
  }
  CHECK(d.collocation.P == cfg.Q);
  CHECK(d.collocation.d == 2);
  CHECK(d.test.P == cfg.P_test);
  for (double t : d.test.target) CHECK(std::isfinite(t));
}

TEST_CASE("generate_data shapes: eikonal") {
  TrainConfig cfg;
  cfg.benchmark = "eikonal";
  cfg.N = 3;
  cfg.m = 8;
  cfg.P = 4;
  cfg.Q = 6;
  cfg.N_test = 2;
  cfg.P_test = 5;
  GeneratedData d = harness::generate_data(cfg);
  CHECK(d.constraints.m == 2 * cfg.m);  // interleaved (x, y) sensor pairs
  CHECK(d.constraints.d == 2);
  // the boundary pool is the full sensor set of each curve
  CHECK(d.constraints.P == cfg.m);
  for (int i = 0; i < cfg.N; ++i) {
    int64_t r0 = static_cast<int64_t>(i) * cfg.m;
    // sensor 0 sits at angle zero so its x coordinate is the radius
    double radius = d.constraints.branch_row(r0)[0];
    CHECK(radius >= cfg.radius_lo);
    CHECK(radius <= cfg.radius_hi);
    for (int j = 0; j < cfg.m; ++j) {
      auto q = d.constraints.query_row(r0 + j);
      CHECK(std::hypot(q[0], q[1]) == doctest::Approx(radius).epsilon(1e-12));
      CHECK(q[0] == d.constraints.branch_row(r0)[static_cast<size_t>(2 * j)]);
      CHECK(q[1] == d.constraints.branch_row(r0)[static_cast<size_t>(2 * j) + 1]);
      CHECK(d.constraints.target[static_cast<size_t>(r0 + j)] == 0.0);
    }
  }
  for (int64_t r = 0; r < d.collocation.rows(); ++r) {
    auto q = d.collocation.query_row(r);
    CHECK(q[0] >= cfg.box_lo);
    CHECK(q[0] <= cfg.box_hi);
    CHECK(q[1] >= cfg.box_lo);
    CHECK(q[1] <= cfg.box_hi);
  }
  // test targets are the exact signed distance for the sample's radius
  for (int i = 0; i < cfg.N_test; ++i) {
    int64_t r0 = static_cast<int64_t>(i) * cfg.P_test;
    double radius = d.test.branch_row(r0)[0];
    for (int j = 0; j < cfg.P_test; ++j) {
      auto q = d.test.query_row(r0 + j);
      CHECK(d.test.target[static_cast<size_t>(r0 + j)] ==
            doctest::Approx(datagen::sdf_circle(radius, q[0], q[1])).epsilon(1e-12));
    }
  }
}

TEST_CASE("write_data/read_data round trip") {
  TrainConfig cfg;
  cfg.benchmark = "burgers";
  cfg.N = 2;
  cfg.m = 8;
  cfg.P = 2;
  cfg.Q = 3;
  cfg.N_test = 1;
  cfg.P_test = 4;
  GeneratedData d = harness::generate_data(cfg);
  std::string dir = tmpdir("pidon_harness_data");
  harness::write_data(dir, d);
  GeneratedData r = harness::read_data(dir);
  CHECK(r.constraints.branch == d.constraints.branch);
  CHECK(r.constraints.query == d.constraints.query);
  CHECK(r.constraints.target == d.constraints.target);
  CHECK(r.collocation.query == d.collocation.query);
  CHECK(r.test.target == d.test.target);
  REQUIRE(r.bc.has_value());
  CHECK(r.bc->query == d.bc->query);
  fs::remove_all(dir);
}

TEST_CASE("train writes artifacts and is deterministic") {
  TrainConfig cfg = tiny_antiderivative();
  cfg.iterations = 60;
  cfg.metrics_every = 20;
  GeneratedData data = harness::generate_data(cfg);
  std::string d1 = tmpdir("pidon_train_a"), d2 = tmpdir("pidon_train_b");
  harness::TrainResult r1 = harness::train(cfg, data, d1);
  harness::TrainResult r2 = harness::train(cfg, data, d2);
  CHECK(!r1.aborted);
  REQUIRE(r1.metrics.size() == 3);  // iterations 0, 20, 40
  CHECK(r1.metrics[0].iteration == 0);
  CHECK(r1.metrics[2].iteration == 40);
  CHECK(r1.model.theta == r2.model.theta);
  REQUIRE(r2.metrics.size() == r1.metrics.size());
  for (size_t i = 0; i < r1.metrics.size(); ++i) {
    CHECK(r1.metrics[i].total == r2.metrics[i].total);
    CHECK(r1.metrics[i].physics == r2.metrics[i].physics);
    CHECK(r1.metrics[i].op == r2.metrics[i].op);
    CHECK(r1.metrics[i].lr == nn::lr_schedule(cfg.base_lr, r1.metrics[i].iteration));
  }
  CHECK(fs::exists(d1 + "/metrics.csv"));
  CHECK(fs::exists(d1 + "/checkpoint.bin"));

  // the checkpoint holds the final parameters
  deeponet::DeepOnetModel loaded = deeponet::load_checkpoint(d1 + "/checkpoint.bin");
  CHECK(loaded.theta == r1.model.theta);

  std::ifstream csv(d1 + "/metrics.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header == "iteration,total,ic,bc,physics,operator,lr,wall_seconds");
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("zero iterations keeps the freshly initialized model") {
  TrainConfig cfg = tiny_antiderivative();
  cfg.iterations = 0;
  GeneratedData data = harness::generate_data(cfg);
  std::string d1 = tmpdir("pidon_train_zero");
  harness::TrainResult r = harness::train(cfg, data, d1);
  CHECK(r.metrics.empty());
  CHECK(!r.aborted);
  // same seed, same initialization
  std::string d2 = tmpdir("pidon_train_zero2");
  harness::TrainResult r2 = harness::train(cfg, data, d2);
  CHECK(r.model.theta == r2.model.theta);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("desk-scale training reduces the loss for most seeds") {
  // loss at iteration 1000 below the initial loss, median over 5 seeds
  TrainConfig cfg;
  cfg.benchmark = "antiderivative";
  cfg.N = 1000;
  cfg.m = 100;
  cfg.P = 1;
  cfg.Q = 100;
  cfg.N_test = 2;  // the test split is unused here
  cfg.arch.width = 32;
  cfg.arch.depth = 3;
  cfg.arch.latent = 32;
  cfg.iterations = 1001;
  cfg.batch_size = 256;
  cfg.batch_samples = 32;
  cfg.metrics_every = 1000;
  GeneratedData data = harness::generate_data(cfg);
  int decreased = 0;
  for (uint64_t seed : {11, 12, 13, 14, 15}) {
    cfg.seed = seed;
    std::string dir = tmpdir("pidon_train_smoke");
    harness::TrainResult r = harness::train(cfg, data, dir);
    REQUIRE(r.metrics.size() == 2);
    CHECK(r.metrics[1].iteration == 1000);
    if (r.metrics[1].total < r.metrics[0].total) ++decreased;
    fs::remove_all(dir);
  }
  CHECK(decreased >= 3);
}

TEST_CASE("operator mode trains on constraint data only") {
  TrainConfig cfg = tiny_antiderivative();
  cfg.mode = "operator";
  cfg.iterations = 20;
  cfg.metrics_every = 10;
  GeneratedData data = harness::generate_data(cfg);
  std::string dir = tmpdir("pidon_train_op");
  harness::TrainResult r = harness::train(cfg, data, dir);
  CHECK(!r.aborted);
  for (const harness::MetricsRecord& rec : r.metrics) {
    CHECK(rec.physics == 0.0);
    CHECK(rec.total == rec.op);
  }
  fs::remove_all(dir);
}

TEST_CASE("evaluate") {
  TrainConfig cfg = tiny_antiderivative();
  cfg.iterations = 0;
  GeneratedData data = harness::generate_data(cfg);
  std::string dir = tmpdir("pidon_eval");
  deeponet::DeepOnetModel model = harness::train(cfg, data, dir).model;
  fs::remove_all(dir);

  // targets equal to the model's own predictions score zero
  deeponet::OperatorDataset perfect = data.test;
  for (int64_t r = 0; r < perfect.rows(); ++r)
    perfect.target[static_cast<size_t>(r)] =
        deeponet::deeponet_eval(model, perfect.branch_row(r), perfect.query_row(r));
  harness::EvalSummary s = harness::evaluate(model, perfect);
  CHECK(s.per_sample.size() == static_cast<size_t>(cfg.N_test));
  CHECK(s.mean == doctest::Approx(0.0));
  CHECK(s.stddev == doctest::Approx(0.0));

  // the zero model against nonzero targets has relative error exactly 1
  deeponet::DeepOnetModel zero = model;
  std::fill(zero.theta.begin(), zero.theta.end(), 0.0);
  deeponet::OperatorDataset ones = data.test;
  for (double& t : ones.target) t = 1.0;
  harness::EvalSummary sz = harness::evaluate(zero, ones);
  for (double e : sz.per_sample) CHECK(e == doctest::Approx(1.0).epsilon(1e-14));

  // mean and sample standard deviation agree with a direct computation
  harness::EvalSummary st = harness::evaluate(model, data.test);
  double mean = 0.0;
  for (double e : st.per_sample) mean += e;
  mean /= static_cast<double>(st.per_sample.size());
  double var = 0.0;
  for (double e : st.per_sample) var += (e - mean) * (e - mean);
  var /= static_cast<double>(st.per_sample.size()) - 1;
  CHECK(st.mean == doctest::Approx(mean).epsilon(1e-14));
  CHECK(st.stddev == doctest::Approx(std::sqrt(var)).epsilon(1e-12));

  deeponet::OperatorDataset untargeted = data.test;
  untargeted.has_targets = false;
  CHECK_THROWS_AS((void)harness::evaluate(model, untargeted), std::invalid_argument);
}

TEST_CASE("predict matches pointwise evaluation") {
  TrainConfig cfg = tiny_antiderivative();
  cfg.iterations = 0;
  GeneratedData data = harness::generate_data(cfg);
  std::string dir = tmpdir("pidon_predict");
  deeponet::DeepOnetModel model = harness::train(cfg, data, dir).model;
  fs::remove_all(dir);

  std::vector<double> u(data.test.branch_row(0).begin(), data.test.branch_row(0).end());
  std::vector<double> queries{0.0, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> out = harness::predict(model, u, queries, 1);
  REQUIRE(out.size() == queries.size());
  for (size_t i = 0; i < queries.size(); ++i) {
    std::span<const double> y(&queries[i], 1);
    CHECK(out[i] == deeponet::deeponet_eval(model, u, y));
  }
  CHECK_THROWS_AS((void)harness::predict(model, u, queries, 2), std::invalid_argument);

  std::string path = (fs::temp_directory_path() / "pidon_pred.csv").string();
  harness::write_prediction_csv(path, queries, 1, out);
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "# P=5 d=1");
  std::getline(f, line);
  CHECK(line == "y0,value");
  int rows = 0;
  while (std::getline(f, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 5);
  fs::remove(path);
}
