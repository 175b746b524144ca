#pragma once

// Experiment orchestration: config file handling, dataset generation for the
// four benchmarks, the mini-batch training loop, metrics and evaluation.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pidon/datagen.hpp"
#include "pidon/pde.hpp"

namespace pidon::harness {

using deeponet::DeepOnetModel;
using deeponet::FieldSample;
using deeponet::OperatorDataset;

// ---- Configuration ----------------------------------------------------------

struct ArchConfig {
  std::string backbone = "mlp";
  int width = 32;
  int depth = 3;
  int latent = 32;
  std::string activation = "tanh";
  int fourier_m = 0;  // 0 disables the Fourier embedding
  double fourier_sigma = 1.0;

  bool operator==(const ArchConfig&) const = default;
};

struct TrainConfig {
  // problem
  std::string benchmark = "antiderivative";
  double D = 0.01;
  double k = 0.01;
  double nu = 0.01;
  double lambda_ic = 1.0;
  // data
  int N = 1000;
  int m = 100;
  int P = 1;
  int Q = 100;
  int N_test = 200;
  int P_test = 100;
  double length_scale = 0.2;
  double radius_lo = 0.5;
  double radius_hi = 1.5;
  double box_lo = -2.0;
  double box_hi = 2.0;
  // model
  ArchConfig arch;
  // training
  long iterations = 20000;
  double base_lr = 1e-3;
  int batch_size = 10000;
  int batch_samples = 16;  // input samples touched per iteration
  std::string mode = "physics";  // physics | operator (data-only baseline)
  uint64_t seed = 1234;
  int metrics_every = 100;

  bool operator==(const TrainConfig&) const = default;
};

// Flat `key = value` text with [section] headers; '#' starts a comment.
TrainConfig parse_config(const std::string& text);
std::string serialize_config(const TrainConfig& cfg);
TrainConfig load_config(const std::string& path);

pde::PdeProblem problem_from(const TrainConfig& cfg);

// ---- Data generation ----------------------------------------------------------

// Training pools and test set in the shared dataset layout. `bc` holds the
// periodic-boundary time samples and exists only for Burgers.
struct GeneratedData {
  OperatorDataset constraints;
  OperatorDataset collocation;
  OperatorDataset test;
  std::optional<OperatorDataset> bc;
};

GeneratedData generate_data(const TrainConfig& cfg);
void write_data(const std::string& dir, const GeneratedData& data);
GeneratedData read_data(const std::string& dir);

// ---- Mini-batching ------------------------------------------------------------

// Deterministic per-iteration stream derived from (seed, iteration).
std::mt19937_64 iter_rng(uint64_t seed, long iter);

struct Minibatch {
  std::vector<int64_t> cons;    // row indices into the constraint pool
  std::vector<int64_t> colloc;  // row indices into the collocation pool
};

// batch_size rows with replacement, split between the pools proportionally to
// their sizes (each non-empty pool gets at least one row).
Minibatch sample_minibatch(int64_t cons_rows, int64_t colloc_rows, int batch_size,
                           std::mt19937_64& rng);

// ---- Training -----------------------------------------------------------------

struct MetricsRecord {
  long iteration = 0;
  double total = 0.0, ic = 0.0, bc = 0.0, physics = 0.0, op = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

void write_metrics_csv(const std::string& path, std::span<const MetricsRecord> records);

struct TrainResult {
  DeepOnetModel model;
  std::vector<MetricsRecord> metrics;
  bool aborted = false;  // non-finite loss; model holds the last good parameters
};

// Runs the loop and writes <out_dir>/metrics.csv and <out_dir>/checkpoint.bin.
TrainResult train(const TrainConfig& cfg, const GeneratedData& data, const std::string& out_dir);

// ---- Evaluation and prediction -------------------------------------------------

struct EvalSummary {
  std::vector<double> per_sample;  // relative L2 per test sample
  double mean = 0.0;
  double stddev = 0.0;
};

EvalSummary evaluate(const DeepOnetModel& model, const OperatorDataset& test);

// G(u) at each query row (d columns per row).
std::vector<double> predict(const DeepOnetModel& model, std::span<const double> u,
                            std::span<const double> queries, int d);

void write_prediction_csv(const std::string& path, std::span<const double> queries, int d,
                          std::span<const double> values);

}  // namespace pidon::harness
