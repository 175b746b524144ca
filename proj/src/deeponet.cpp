#include "pidon/deeponet.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace pidon::deeponet {

using nlohmann::json;

DeepOnetModel make_deeponet(DeepOnetArch arch, double fourier_sigma, int fourier_m, uint64_t seed) {
  std::mt19937_64 rng(seed);
  DeepOnetModel model;
  if (fourier_m > 0) {
    arch.has_fourier = true;
    model.fourier = nn::make_fourier_map(fourier_m, arch.query_dim, fourier_sigma, rng);
    arch.trunk.input = 2 * fourier_m;
  } else {
    arch.has_fourier = false;
    arch.trunk.input = arch.query_dim;
  }
  arch.branch.output = arch.q;
  arch.trunk.output = arch.q;
  model.arch = arch;
  std::vector<double> bp = arch.branch.kind == Backbone::Mlp
                               ? nn::init_params(arch.branch.mlp(), rng)
                               : nn::init_params(arch.branch.modified(), rng);
  std::vector<double> tp = arch.trunk.kind == Backbone::Mlp
                               ? nn::init_params(arch.trunk.mlp(), rng)
                               : nn::init_params(arch.trunk.modified(), rng);
  model.theta = std::move(bp);
  model.theta.insert(model.theta.end(), tp.begin(), tp.end());
  return model;
}

double operator_loss(const DeepOnetModel& model, const OperatorDataset& data) {
  if (!data.has_targets) throw std::invalid_argument("operator_loss: dataset has no targets");
  double acc = 0.0;
  std::vector<double> bfeat;
  int64_t block_start = -1;
  for (int64_t r = 0; r < data.rows(); ++r) {
    if (block_start < 0 || data.sample_id[r] != data.sample_id[block_start]) {
      bfeat = branch_features(model, data.branch_row(r));
      block_start = r;
    }
    std::vector<double> tfeat = trunk_features(model, data.query_row(r));
    double pred = merge_features(std::span<const double>(bfeat), std::span<const double>(tfeat));
    double e = pred - data.target[static_cast<size_t>(r)];
    acc += e * e;
  }
  return acc / static_cast<double>(data.rows());
}

OperatorDataset assemble_dataset(
    std::span<const FieldSample> samples,
    std::span<const std::vector<std::pair<QueryPoint, std::optional<double>>>> queries_per_sample) {
  if (samples.empty()) throw std::invalid_argument("assemble_dataset: no samples");
  if (samples.size() != queries_per_sample.size())
    throw std::invalid_argument("assemble_dataset: samples/queries length mismatch");
  OperatorDataset out;
  out.N = static_cast<int64_t>(samples.size());
  out.m = static_cast<int>(samples[0].values.size());
  out.P = static_cast<int>(queries_per_sample[0].size());
  if (out.P < 1) throw std::invalid_argument("assemble_dataset: empty query list");
  out.d = static_cast<int>(queries_per_sample[0][0].first.y.size());
  out.has_targets = queries_per_sample[0][0].second.has_value();
  for (size_t i = 0; i < samples.size(); ++i) {
    if (static_cast<int>(samples[i].values.size()) != out.m)
      throw std::invalid_argument("assemble_dataset: inconsistent branch input length");
    if (static_cast<int>(queries_per_sample[i].size()) != out.P)
      throw std::invalid_argument("assemble_dataset: ragged query counts (P differs across samples)");
    for (const auto& [q, t] : queries_per_sample[i]) {
      if (static_cast<int>(q.y.size()) != out.d)
        throw std::invalid_argument("assemble_dataset: inconsistent query dimension");
      if (t.has_value() != out.has_targets)
        throw std::invalid_argument("assemble_dataset: mixed presence of targets");
      out.sample_id.push_back(samples[i].id);
      out.branch.insert(out.branch.end(), samples[i].values.begin(), samples[i].values.end());
      out.query.insert(out.query.end(), q.y.begin(), q.y.end());
      if (out.has_targets) out.target.push_back(*t);
    }
  }
  return out;
}

double relative_l2(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw std::invalid_argument("relative_l2: size mismatch or empty");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    double e = pred[i] - truth[i];
    num += e * e;
    den += truth[i] * truth[i];
  }
  if (den == 0.0) throw std::invalid_argument("relative_l2: zero-norm truth");
  return std::sqrt(num / den);
}

void write_dataset(const std::string& path, const OperatorDataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << data.N << ' ' << data.m << ' ' << data.P << ' ' << data.d << ' '
     << (data.has_targets ? 1 : 0) << '\n';
  std::vector<double> rec(1 + static_cast<size_t>(data.m) + data.d + (data.has_targets ? 1 : 0));
  for (int64_t r = 0; r < data.rows(); ++r) {
    size_t k = 0;
    rec[k++] = static_cast<double>(data.sample_id[static_cast<size_t>(r)]);
    for (int i = 0; i < data.m; ++i) rec[k++] = data.branch[static_cast<size_t>(r) * data.m + i];
    for (int i = 0; i < data.d; ++i) rec[k++] = data.query[static_cast<size_t>(r) * data.d + i];
    if (data.has_targets) rec[k++] = data.target[static_cast<size_t>(r)];
    os.write(reinterpret_cast<const char*>(rec.data()),
             static_cast<std::streamsize>(rec.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

OperatorDataset read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  OperatorDataset data;
  int has_targets = 0;
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  if (!(hs >> data.N >> data.m >> data.P >> data.d >> has_targets))
    throw std::runtime_error("bad dataset header in " + path);
  data.has_targets = has_targets != 0;
  const size_t rec_len = 1 + static_cast<size_t>(data.m) + data.d + (data.has_targets ? 1 : 0);
  std::vector<double> rec(rec_len);
  data.sample_id.reserve(static_cast<size_t>(data.rows()));
  data.branch.reserve(static_cast<size_t>(data.rows()) * data.m);
  data.query.reserve(static_cast<size_t>(data.rows()) * data.d);
  for (int64_t r = 0; r < data.rows(); ++r) {
    is.read(reinterpret_cast<char*>(rec.data()),
            static_cast<std::streamsize>(rec_len * sizeof(double)));
    if (!is) throw std::runtime_error("truncated dataset: " + path);
    size_t k = 0;
    data.sample_id.push_back(static_cast<int64_t>(rec[k++]));
    for (int i = 0; i < data.m; ++i) data.branch.push_back(rec[k++]);
    for (int i = 0; i < data.d; ++i) data.query.push_back(rec[k++]);
    if (data.has_targets) data.target.push_back(rec[k++]);
  }
  return data;
}

void export_dataset_csv(const std::string& path, const OperatorDataset& data) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  std::fprintf(f, "# N=%" PRId64 " m=%d P=%d d=%d has_targets=%d\n", data.N, data.m, data.P, data.d,
               data.has_targets ? 1 : 0);
  for (int64_t r = 0; r < data.rows(); ++r) {
    std::fprintf(f, "%" PRId64, data.sample_id[static_cast<size_t>(r)]);
    for (int i = 0; i < data.m; ++i)
      std::fprintf(f, ",%.17g", data.branch[static_cast<size_t>(r) * data.m + i]);
    for (int i = 0; i < data.d; ++i)
      std::fprintf(f, ",%.17g", data.query[static_cast<size_t>(r) * data.d + i]);
    if (data.has_targets) std::fprintf(f, ",%.17g", data.target[static_cast<size_t>(r)]);
    std::fprintf(f, "\n");
  }
  std::fclose(f);
}

std::vector<FieldSample> dataset_samples(const OperatorDataset& data) {
  std::vector<FieldSample> out;
  for (int64_t r = 0; r < data.rows(); r += data.P) {
    FieldSample s;
    s.id = data.sample_id[static_cast<size_t>(r)];
    auto b = data.branch_row(r);
    s.values.assign(b.begin(), b.end());
    out.push_back(std::move(s));
  }
  return out;
}

namespace {

json netspec_to_json(const NetSpec& s) {
  return json{{"kind", to_string(s.kind)}, {"input", s.input},   {"width", s.width},
              {"depth", s.depth},          {"output", s.output}, {"activation", nn::to_string(s.act)}};
}

NetSpec netspec_from_json(const json& j) {
  NetSpec s;
  s.kind = backbone_from_string(j.at("kind").get<std::string>());
  s.input = j.at("input").get<int>();
  s.width = j.at("width").get<int>();
  s.depth = j.at("depth").get<int>();
  s.output = j.at("output").get<int>();
  s.act = nn::activation_from_string(j.at("activation").get<std::string>());
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const DeepOnetModel& model) {
  json meta;
  meta["format"] = "pidon-deeponet";
  meta["branch"] = netspec_to_json(model.arch.branch);
  meta["trunk"] = netspec_to_json(model.arch.trunk);
  meta["q"] = model.arch.q;
  meta["query_dim"] = model.arch.query_dim;
  meta["has_fourier"] = model.arch.has_fourier;
  if (model.fourier) meta["fourier_sigma"] = model.fourier->sigma;
  std::vector<nn::NamedArray> arrays;
  arrays.push_back({"theta", {model.theta.size()}, model.theta});
  if (model.fourier)
    arrays.push_back({"fourier_B",
                      {static_cast<size_t>(model.fourier->mf), static_cast<size_t>(model.fourier->d)},
                      model.fourier->B});
  nn::save_archive(path, meta.dump(), arrays);
}

DeepOnetModel load_checkpoint(const std::string& path) {
  auto [meta_str, arrays] = nn::load_archive(path);
  json meta = json::parse(meta_str);
  DeepOnetModel model;
  model.arch.branch = netspec_from_json(meta.at("branch"));
  model.arch.trunk = netspec_from_json(meta.at("trunk"));
  model.arch.q = meta.at("q").get<int>();
  model.arch.query_dim = meta.at("query_dim").get<int>();
  model.arch.has_fourier = meta.at("has_fourier").get<bool>();
  for (nn::NamedArray& a : arrays) {
    if (a.name == "theta") {
      model.theta = std::move(a.data);
    } else if (a.name == "fourier_B") {
      nn::FourierFeatureMap f;
      f.mf = static_cast<int>(a.shape.at(0));
      f.d = static_cast<int>(a.shape.at(1));
      f.sigma = meta.value("fourier_sigma", 1.0);
      f.B = std::move(a.data);
      model.fourier = std::move(f);
    }
  }
  if (model.theta.size() != model.arch.total_params())
    throw std::runtime_error("checkpoint parameter count does not match architecture: " + path);
  return model;
}

}  // namespace pidon::deeponet
