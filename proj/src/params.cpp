#include "tkgr/params.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "tkgr/error.hpp"

namespace tkgr {

namespace {
constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "tkgr-checkpoint";
}  // namespace

const char* block_name(std::size_t block) noexcept {
  switch (block) {
    case 0: return "entity_embedding";
    case 1: return "relation_embedding";
    case 2: return "transform";
    case 3: return "attention";
    default: return "unknown";
  }
}

void ModelParams::validate() const {
  const std::size_t d = dim();
  if (d == 0) throw ShapeError("model dimension is zero");
  if (!entity_emb().is_matrix() || entity_emb().cols() != d) throw ShapeError("entity table width != d");
  if (!relation_emb().is_matrix() || relation_emb().cols() != d) throw ShapeError("relation table width != d");
  if (!transform().is_matrix() || transform().cols() != d) throw ShapeError("transform is not d x d");
  if (!attention().is_vector() || attention().size() != 4 * d) throw ShapeError("attention vector length != 4d");
  if (time_freq.size() != d || time_phase.size() != d) throw ShapeError("time encoding length != d");
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    if (!trainable[b].all_finite()) throw NumericError(std::string("non-finite values in ") + block_name(b));
  }
  if (!time_freq.all_finite() || !time_phase.all_finite()) throw NumericError("non-finite time encoding");
}

ModelParams init_params(std::size_t num_entities, std::size_t num_relations, std::size_t dim,
                        std::uint64_t seed) {
  if (dim == 0) throw ArgumentError("init_params: dim must be positive");
  std::mt19937_64 rng(seed);
  auto fill = [&rng](Tensor& t, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : t.values()) v = u(rng);
  };
  const double d = static_cast<double>(dim);

  ModelParams p;
  p.seed = seed;
  p.entity_emb() = Tensor::matrix(num_entities, dim);
  p.relation_emb() = Tensor::matrix(num_relations, dim);
  p.transform() = Tensor::matrix(dim, dim);
  p.attention() = Tensor::vector(4 * dim);
  const double emb_bound = std::sqrt(3.0 / d);
  fill(p.entity_emb(), emb_bound);
  fill(p.relation_emb(), emb_bound);
  fill(p.transform(), std::sqrt(6.0 / (2.0 * d)));
  fill(p.attention(), std::sqrt(6.0 / (4.0 * d + 1.0)));

  p.time_freq = Tensor::vector(dim);
  p.time_phase = Tensor::vector(dim);
  const double step = dim > 1 ? 4.0 / (d - 1.0) : 0.0;
  std::uniform_real_distribution<double> jitter(0.9, 1.1);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  for (std::size_t i = 0; i < dim; ++i) {
    p.time_freq[i] = std::pow(10.0, -static_cast<double>(i) * step) * jitter(rng);
    p.time_phase[i] = phase(rng);
  }
  return p;
}

ParamArrays zeros_like(const ParamArrays& p) {
  ParamArrays out;
  for (std::size_t b = 0; b < kNumBlocks; ++b) {
    out[b] = p[b].is_matrix() ? Tensor::matrix(p[b].rows(), p[b].cols()) : Tensor::vector(p[b].size());
  }
  return out;
}

void axpy(double alpha, const ParamArrays& x, ParamArrays& y) {
  for (std::size_t b = 0; b < kNumBlocks; ++b) axpy(alpha, x[b], y[b]);
}

double squared_norm(const ParamArrays& p) {
  double s = 0.0;
  for (const Tensor& t : p) s += squared_norm(t);
  return s;
}

double squared_distance(const ParamArrays& a, const ParamArrays& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < kNumBlocks; ++k) {
    if (!a[k].same_shape(b[k])) {
      throw ShapeError(std::string("parameter block ") + block_name(k) + " " + a[k].shape_string() +
                       " vs " + b[k].shape_string());
    }
    auto x = a[k].values();
    auto y = b[k].values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double diff = x[i] - y[i];
      s += diff * diff;
    }
  }
  return s;
}

std::size_t parameter_count(const ParamArrays& p) {
  std::size_t n = 0;
  for (const Tensor& t : p) n += t.size();
  return n;
}

namespace {

nlohmann::json tensor_json(const Tensor& t) {
  nlohmann::json j;
  j["rank"] = t.rank();
  j["rows"] = t.rows();
  j["cols"] = t.cols();
  j["values"] = std::vector<double>(t.values().begin(), t.values().end());
  return j;
}

Tensor tensor_from_json(const nlohmann::json& j) {
  auto values = j.at("values").get<std::vector<double>>();
  if (j.at("rank").get<int>() == 2) {
    return Tensor::from(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(), std::move(values));
  }
  return Tensor::from(std::move(values));
}

}  // namespace

void write_checkpoint(const ModelParams& params, std::ostream& out) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["dim"] = params.dim();
  j["seed"] = params.seed;
  for (std::size_t b = 0; b < kNumBlocks; ++b) j["blocks"][block_name(b)] = tensor_json(params.trainable[b]);
  j["time_freq"] = tensor_json(params.time_freq);
  j["time_phase"] = tensor_json(params.time_phase);
  out << j.dump() << '\n';
}

ModelParams read_checkpoint(std::istream& in) {
  nlohmann::json j;
  try {
    in >> j;
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw ConfigError("not a checkpoint file");
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw ConfigError("unsupported checkpoint version " + j.at("version").dump());
    }
    ModelParams p;
    p.seed = j.at("seed").get<std::uint64_t>();
    for (std::size_t b = 0; b < kNumBlocks; ++b) p.trainable[b] = tensor_from_json(j.at("blocks").at(block_name(b)));
    p.time_freq = tensor_from_json(j.at("time_freq"));
    p.time_phase = tensor_from_json(j.at("time_phase"));
    p.validate();
    if (p.dim() != j.at("dim").get<std::size_t>()) throw ShapeError("checkpoint dim mismatch");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ArgumentError("cannot write " + path);
  write_checkpoint(params, out);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path);
  return read_checkpoint(in);
}

}  // namespace tkgr
