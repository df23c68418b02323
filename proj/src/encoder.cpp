#include "tkgr/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tkgr/error.hpp"

namespace tkgr {

const NeighborSet& NeighborCache::get(EntityId entity, Timestamp t) {
  const Key key{entity, t};
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  return cache_.emplace(key, sample_temporal_neighbors(graph_, entity, t, budget_, window_)).first->second;
}

Tensor time_encode(Timestamp delta, const ModelParams& params) {
  if (delta < 0) throw ArgumentError("time_encode: negative time delta " + std::to_string(delta));
  const std::size_t d = params.time_freq.size();
  const double amplitude = std::sqrt(1.0 / static_cast<double>(d));
  Tensor out = Tensor::vector(d);
  const auto dt = static_cast<double>(delta);
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = amplitude * std::cos(params.time_freq[i] * dt + params.time_phase[i]);
  }
  return out;
}

namespace {

void check_entity(const ModelParams& params, EntityId entity) {
  if (entity < 0 || static_cast<std::size_t>(entity) >= params.num_entities()) {
    throw ArgumentError("encoder: entity " + std::to_string(entity) + " has no embedding row");
  }
}

void check_relation(const ModelParams& params, RelationId relation) {
  if (relation < 0 || static_cast<std::size_t>(relation) >= params.num_relations()) {
    throw ArgumentError("encoder: relation " + std::to_string(relation) + " has no embedding row");
  }
}

Tensor row_copy(const Tensor& m, std::size_t r) {
  auto row = m.row(r);
  return Tensor::from(std::vector<double>(row.begin(), row.end()));
}

}  // namespace

std::vector<double> attention_weights(const Tensor& target_repr, const NeighborSet& neighbors,
                                      std::span<const Tensor> layer_reprs, const ModelParams& params,
                                      Timestamp t) {
  if (neighbors.events.empty()) throw ArgumentError("attention_weights: empty neighbor set");
  if (layer_reprs.size() != neighbors.events.size()) {
    throw ShapeError("attention_weights: representations not aligned with neighbor events");
  }
  const std::size_t d = params.dim();
  if (target_repr.size() != d) throw ShapeError("attention_weights: target representation has the wrong size");
  const Tensor& a = params.attention();
  std::vector<double> q(neighbors.events.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    const NeighborEvent& ev = neighbors.events[i];
    check_relation(params, ev.relation);
    const Tensor phi = time_encode(t - ev.time, params);
    auto rel = params.relation_emb().row(static_cast<std::size_t>(ev.relation));
    // The target block a[0:d] adds the same amount to every logit and
    // cancels in the softmax, so it is left out.
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += a[d + k] * layer_reprs[i][k];
    for (std::size_t k = 0; k < d; ++k) s += a[2 * d + k] * rel[k];
    for (std::size_t k = 0; k < d; ++k) s += a[3 * d + k] * phi[k];
    q[i] = s;
  }
  const double top = *std::max_element(q.begin(), q.end());
  double total = 0.0;
  for (double& v : q) {
    v = std::exp(v - top);
    total += v;
  }
  for (double& v : q) v /= total;
  return q;
}

double score(const ModelParams& params, std::span<const double> h_s, RelationId relation,
             std::span<const double> h_o) {
  check_relation(params, relation);
  auto h_r = params.relation_emb().row(static_cast<std::size_t>(relation));
  if (h_s.size() != h_r.size() || h_o.size() != h_r.size()) throw ShapeError("score: dimension mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < h_r.size(); ++k) {
    const double diff = h_s[k] + h_r[k] - h_o[k];
    s += diff * diff;
  }
  return -s;
}

ValueEncoder::ValueEncoder(const EventSource& graph, const ModelParams& params, EncoderConfig config,
                           NeighborCache* shared_cache)
    : params_(params),
      config_(config),
      own_cache_(graph, config.budget, config.window),
      cache_(shared_cache ? *shared_cache : own_cache_) {
  if (config_.layers < 1) throw ArgumentError("encoder: at least one layer required");
}

const Tensor& ValueEncoder::encode(EntityId entity, Timestamp t) {
  return encode_layer(entity, t, config_.layers);
}

const Tensor& ValueEncoder::encode_layer(EntityId entity, Timestamp t, std::size_t layer) {
  const Key key{entity, t, layer};
  if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  check_entity(params_, entity);

  Tensor out;
  const NeighborSet* neighbors = layer == 0 ? nullptr : &cache_.get(entity, t);
  if (neighbors == nullptr || neighbors->events.empty()) {
    out = row_copy(params_.entity_emb(), static_cast<std::size_t>(entity));
  } else {
    const Tensor target = Tensor::vector(params_.dim());
    std::vector<Tensor> reprs;
    reprs.reserve(neighbors->events.size());
    for (const NeighborEvent& ev : neighbors->events) reprs.push_back(encode_layer(ev.entity, ev.time, layer - 1));
    const std::vector<double> alpha = attention_weights(target, *neighbors, reprs, params_, t);

    const std::size_t d = params_.dim();
    Tensor mixed = Tensor::vector(d);
    for (std::size_t i = 0; i < reprs.size(); ++i) {
      for (std::size_t k = 0; k < d; ++k) mixed[k] += alpha[i] * reprs[i][k];
    }
    out = Tensor::vector(d);
    const Tensor& w = params_.transform();
    for (std::size_t r = 0; r < d; ++r) {
      for (std::size_t c = 0; c < d; ++c) out[c] += mixed[r] * w.at(r, c);
    }
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  }
  return memo_.emplace(key, std::move(out)).first->second;
}

Tensor encode_entity(const EventSource& graph, const ModelParams& params, EntityId entity, Timestamp t,
                     const EncoderConfig& config) {
  ValueEncoder encoder(graph, params, config);
  return encoder.encode(entity, t);
}

Var BoundParams::block(std::size_t b) const {
  switch (b) {
    case 0: return entity;
    case 1: return relation;
    case 2: return transform;
    case 3: return attention;
    default: throw ArgumentError("no such parameter block");
  }
}

BoundParams bind(Tape& tape, const ModelParams& params) {
  params.validate();
  BoundParams b;
  b.entity = tape.leaf(params.entity_emb());
  b.relation = tape.leaf(params.relation_emb());
  b.transform = tape.leaf(params.transform());
  b.attention = tape.leaf(params.attention());
  b.source = &params;
  return b;
}

ParamArrays gradients_of(const Gradients& grads, const BoundParams& bound) {
  ParamArrays out;
  for (std::size_t b = 0; b < kNumBlocks; ++b) out[b] = grads.of(bound.block(b));
  return out;
}

TapeEncoder::TapeEncoder(const EventSource& graph, const BoundParams& params, EncoderConfig config,
                         NeighborCache* shared_cache)
    : params_(params),
      config_(config),
      own_cache_(graph, config.budget, config.window),
      cache_(shared_cache ? *shared_cache : own_cache_) {
  if (config_.layers < 1) throw ArgumentError("encoder: at least one layer required");
}

Var TapeEncoder::encode(EntityId entity, Timestamp t) { return encode_layer(entity, t, config_.layers); }

Var TapeEncoder::encode_layer(EntityId entity, Timestamp t, std::size_t layer) {
  const Key key{entity, t, layer};
  if (auto it = memo_.find(key); it != memo_.end()) return it->second;
  const ModelParams& source = *params_.source;
  check_entity(source, entity);

  Var out;
  const NeighborSet* neighbors = layer == 0 ? nullptr : &cache_.get(entity, t);
  if (neighbors == nullptr || neighbors->events.empty()) {
    out = gather_row(params_.entity, static_cast<std::size_t>(entity));
  } else {
    Tape& tape = *params_.entity.tape();
    // Zero in the target slot; see attention_weights.
    const Var target = tape.constant(Tensor::vector(source.dim()));
    std::vector<Var> reprs;
    std::vector<Var> rows;
    reprs.reserve(neighbors->events.size());
    rows.reserve(neighbors->events.size());
    for (const NeighborEvent& ev : neighbors->events) {
      check_relation(source, ev.relation);
      const Var repr = encode_layer(ev.entity, ev.time, layer - 1);
      const Var rel = gather_row(params_.relation, static_cast<std::size_t>(ev.relation));
      const Var phi = tape.constant(time_encode(t - ev.time, source));
      reprs.push_back(repr);
      rows.push_back(concat({target, repr, rel, phi}));
    }
    const Var logits = matvec(stack(rows), params_.attention);
    const Var alpha = softmax(logits);
    const Var mixed = vecmat(alpha, stack(reprs));
    out = relu(vecmat(mixed, params_.transform));
  }
  memo_.emplace(key, out);
  return out;
}

Var score(const BoundParams& params, Var h_s, RelationId relation, Var h_o) {
  check_relation(*params.source, relation);
  const Var h_r = gather_row(params.relation, static_cast<std::size_t>(relation));
  const Var diff = sub(add(h_s, h_r), h_o);
  return scale(dot(diff, diff), -1.0);
}

}  // namespace tkgr
