#pragma once

// Operator model: branch/trunk networks merged by a dot product, the
// N-by-P row-triplet dataset layout, evaluation metrics and file formats.

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pidon/nn.hpp"

namespace pidon::deeponet {

using ad::Dual1;
using ad::Dual2;
using ad::Var;
using nn::Activation;
using nn::Dual1Vec;
using nn::Dual2Vec;

// An input function represented by its values at m fixed sensor locations.
// For curve inputs, `locations` holds m points of dimension loc_dim and
// `values` is the flattened branch input (loc_dim * m entries).
struct FieldSample {
  std::vector<double> locations;  // m * loc_dim, row-major
  int loc_dim = 1;
  std::vector<double> values;     // branch input vector
  int64_t id = 0;

  int num_sensors() const { return static_cast<int>(locations.size()) / loc_dim; }
};

struct QueryPoint {
  std::vector<double> y;
};

// Row-triplet layout: each sample's branch input repeats P times contiguously.
struct OperatorDataset {
  int64_t N = 0;
  int m = 0;
  int P = 0;
  int d = 0;
  bool has_targets = false;
  std::vector<int64_t> sample_id;  // N*P
  std::vector<double> branch;      // (N*P) x m
  std::vector<double> query;       // (N*P) x d
  std::vector<double> target;      // N*P when has_targets

  int64_t rows() const { return N * P; }
  std::span<const double> branch_row(int64_t r) const {
    return {branch.data() + r * m, static_cast<size_t>(m)};
  }
  std::span<const double> query_row(int64_t r) const {
    return {query.data() + r * d, static_cast<size_t>(d)};
  }
};

enum class Backbone { Mlp, ModifiedMlp };

inline std::string to_string(Backbone b) { return b == Backbone::Mlp ? "mlp" : "modified_mlp"; }
inline Backbone backbone_from_string(const std::string& s) {
  if (s == "mlp") return Backbone::Mlp;
  if (s == "modified_mlp") return Backbone::ModifiedMlp;
  throw std::invalid_argument("unknown backbone: " + s);
}

// One sub-network: a plain or gated MLP of the given shape.
struct NetSpec {
  Backbone kind = Backbone::Mlp;
  int input = 1;
  int width = 50;
  int depth = 1;  // hidden layers (plain) or gate layers (modified)
  int output = 50;
  Activation act = Activation::Tanh;

  nn::MlpArch mlp() const { return {input, width, depth, output, act}; }
  nn::ModifiedMlpArch modified() const { return {input, width, depth, output, act}; }
};

inline size_t param_count(const NetSpec& s) {
  return s.kind == Backbone::Mlp ? nn::param_count(s.mlp()) : nn::param_count(s.modified());
}

template <class P, class X>
auto net_forward(const NetSpec& s, std::span<const P> params, const X& x) {
  if (s.kind == Backbone::Mlp) return nn::mlp_forward(s.mlp(), params, x);
  return nn::modified_mlp_forward(s.modified(), params, x);
}

struct DeepOnetArch {
  NetSpec branch;
  NetSpec trunk;
  int q = 50;         // latent width; branch.output == trunk.output == q
  int query_dim = 1;  // raw y dimension before any Fourier embedding
  bool has_fourier = false;

  size_t branch_params() const { return param_count(branch); }
  size_t trunk_params() const { return param_count(trunk); }
  size_t total_params() const { return branch_params() + trunk_params(); }
};

// Parameters plus the frozen Fourier map, when present.
struct DeepOnetModel {
  DeepOnetArch arch;
  std::optional<nn::FourierFeatureMap> fourier;
  std::vector<double> theta;  // branch params then trunk params

  std::span<const double> branch_theta() const {
    return {theta.data(), arch.branch_params()};
  }
  std::span<const double> trunk_theta() const {
    return {theta.data() + arch.branch_params(), arch.trunk_params()};
  }
};

DeepOnetModel make_deeponet(DeepOnetArch arch, double fourier_sigma, int fourier_m, uint64_t seed);

// ---- Feature evaluation --------------------------------------------------------

inline std::vector<double> branch_features(const DeepOnetModel& model, std::span<const double> u) {
  return net_forward(model.arch.branch, model.branch_theta(), u);
}

inline std::vector<Var> branch_features(const DeepOnetModel& model, std::span<const Var> theta,
                                        std::span<const double> u) {
  return net_forward(model.arch.branch, theta.subspan(0, model.arch.branch_params()), u);
}

namespace detail {
template <class X>
std::vector<X> embed_query(const DeepOnetModel& model, std::span<const X> y) {
  if (!model.arch.has_fourier) return std::vector<X>(y.begin(), y.end());
  return nn::fourier_embed(*model.fourier, y);
}
inline Dual1Vec<double> to_soa(std::span<const Dual1<double>> x) {
  Dual1Vec<double> o;
  for (const auto& e : x) {
    o.v.push_back(e.v);
    o.d.push_back(e.d);
  }
  return o;
}
inline Dual2Vec<double> to_soa(std::span<const Dual2<double>> x) {
  Dual2Vec<double> o;
  for (const auto& e : x) {
    o.v.push_back(e.v);
    o.d1.push_back(e.d1);
    o.d2.push_back(e.d2);
  }
  return o;
}
}  // namespace detail

// Plain-value and dual paths over double parameters.
template <class X>
std::vector<X> trunk_features(const DeepOnetModel& model, std::span<const X> y) {
  std::vector<X> e = detail::embed_query(model, y);
  return net_forward(model.arch.trunk, model.trunk_theta(), std::span<const X>(e));
}

// Taped paths: trunk input coordinates are constants (possibly dual-seeded),
// parameters live on the tape.
inline std::vector<Var> trunk_features(const DeepOnetModel& model, std::span<const Var> theta,
                                       std::span<const double> y) {
  std::vector<double> e = detail::embed_query(model, y);
  return net_forward(model.arch.trunk, theta.subspan(model.arch.branch_params()),
                     std::span<const double>(e));
}
inline Dual1Vec<Var> trunk_features(const DeepOnetModel& model, std::span<const Var> theta,
                                    std::span<const Dual1<double>> y) {
  std::vector<Dual1<double>> e = detail::embed_query(model, y);
  return net_forward(model.arch.trunk, theta.subspan(model.arch.branch_params()),
                     detail::to_soa(std::span<const Dual1<double>>(e)));
}
inline Dual2Vec<Var> trunk_features(const DeepOnetModel& model, std::span<const Var> theta,
                                    std::span<const Dual2<double>> y) {
  std::vector<Dual2<double>> e = detail::embed_query(model, y);
  return net_forward(model.arch.trunk, theta.subspan(model.arch.branch_params()),
                     detail::to_soa(std::span<const Dual2<double>>(e)));
}

// Dot-product merge, Sum_k b_k t_k (no bias after the merge).
template <class X>
X merge_features(std::span<const double> b, std::span<const X> t) {
  if (b.size() != t.size()) throw std::invalid_argument("merge_features: latent width mismatch");
  X acc = b[0] * t[0];
  for (size_t k = 1; k < b.size(); ++k) acc = acc + b[k] * t[k];
  return acc;
}

inline Var merge_features(std::span<const Var> b, std::span<const Var> t) { return ad::dot(b, t); }
inline Dual1<Var> merge_features(std::span<const Var> b, const Dual1Vec<Var>& t) {
  return {ad::dot(b, std::span<const Var>(t.v)), ad::dot(b, std::span<const Var>(t.d))};
}
inline Dual2<Var> merge_features(std::span<const Var> b, const Dual2Vec<Var>& t) {
  return {ad::dot(b, std::span<const Var>(t.v)), ad::dot(b, std::span<const Var>(t.d1)),
          ad::dot(b, std::span<const Var>(t.d2))};
}

// G_theta(u)(y).
inline double deeponet_eval(const DeepOnetModel& model, std::span<const double> u,
                            std::span<const double> y) {
  std::vector<double> b = branch_features(model, u);
  std::vector<double> t = trunk_features(model, y);
  if (b.size() != t.size() || static_cast<int>(b.size()) != model.arch.q)
    throw std::invalid_argument("deeponet_eval: latent width mismatch");
  return merge_features(std::span<const double>(b), std::span<const double>(t));
}

// Mean squared error over all dataset rows (Remark-1 layout).
double operator_loss(const DeepOnetModel& model, const OperatorDataset& data);

// ---- Dataset assembly, metrics, I/O --------------------------------------------

OperatorDataset assemble_dataset(
    std::span<const FieldSample> samples,
    std::span<const std::vector<std::pair<QueryPoint, std::optional<double>>>> queries_per_sample);

double relative_l2(std::span<const double> pred, std::span<const double> truth);

void write_dataset(const std::string& path, const OperatorDataset& data);
OperatorDataset read_dataset(const std::string& path);
void export_dataset_csv(const std::string& path, const OperatorDataset& data);

// Recover the distinct samples of a dataset (first row of each block).
std::vector<FieldSample> dataset_samples(const OperatorDataset& data);

// ---- Checkpointing ---------------------------------------------------------------

void save_checkpoint(const std::string& path, const DeepOnetModel& model);
DeepOnetModel load_checkpoint(const std::string& path);

}  // namespace pidon::deeponet
