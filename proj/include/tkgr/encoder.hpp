#pragma once

// Temporal encoder: Fourier time encoding, attention over sampled temporal
// neighbors, and aggregation into a time-aware entity representation.
//
// Two evaluation paths share the same arithmetic:
//   ValueEncoder  plain doubles, memoized; used for ranking.
//   TapeEncoder   records on a Tape so losses can be differentiated.

#include <cstddef>
#include <span>
#include <unordered_map>
#include <vector>

#include "tkgr/kg.hpp"
#include "tkgr/params.hpp"
#include "tkgr/sampler.hpp"
#include "tkgr/tape.hpp"

namespace tkgr {

struct EncoderConfig {
  std::size_t layers = 1;
  std::size_t budget = 16;
  Timestamp window = 1'000'000'000;
};

// Memo of sampled neighborhoods keyed by (entity, time). Sampling does not
// depend on parameters, so one cache can serve many parameter snapshots
// over the same graph. Not thread-safe.
class NeighborCache {
 public:
  NeighborCache(const EventSource& graph, std::size_t budget, Timestamp window)
      : graph_(graph), budget_(budget), window_(window) {}
  const NeighborSet& get(EntityId entity, Timestamp t);
  const EventSource& graph() const noexcept { return graph_; }

 private:
  struct Key {
    EntityId entity;
    Timestamp time;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      return std::hash<Timestamp>()(k.time) * 1000003u ^ std::hash<EntityId>()(k.entity);
    }
  };
  const EventSource& graph_;
  std::size_t budget_;
  Timestamp window_;
  std::unordered_map<Key, NeighborSet, KeyHash> cache_;
};

// sqrt(1/d) * cos(freq_i * delta + phase_i). Throws ArgumentError for delta < 0.
Tensor time_encode(Timestamp delta, const ModelParams& params);

// Softmax over q_i = a . (target | neighbor_i | relation_i | time(t - t_i)).
// The target block is the same for every i and drops out, so target_repr
// only has its size checked. Throws ArgumentError for an empty neighbor set.
std::vector<double> attention_weights(const Tensor& target_repr, const NeighborSet& neighbors,
                                      std::span<const Tensor> layer_reprs, const ModelParams& params,
                                      Timestamp t);

// -||h_s + h_r - h_o||^2
double score(const ModelParams& params, std::span<const double> h_s, RelationId relation,
             std::span<const double> h_o);

class ValueEncoder {
 public:
  ValueEncoder(const EventSource& graph, const ModelParams& params, EncoderConfig config,
               NeighborCache* shared_cache = nullptr);

  // Layer-L representation of `entity` at time t.
  const Tensor& encode(EntityId entity, Timestamp t);

 private:
  const Tensor& encode_layer(EntityId entity, Timestamp t, std::size_t layer);
  struct Key {
    EntityId entity;
    Timestamp time;
    std::size_t layer;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      return (std::hash<Timestamp>()(k.time) * 1000003u ^ std::hash<EntityId>()(k.entity)) * 31u + k.layer;
    }
  };

  const ModelParams& params_;
  EncoderConfig config_;
  NeighborCache own_cache_;
  NeighborCache& cache_;
  std::unordered_map<Key, Tensor, KeyHash> memo_;
};

// Stateless convenience wrapper around ValueEncoder.
Tensor encode_entity(const EventSource& graph, const ModelParams& params, EntityId entity, Timestamp t,
                     const EncoderConfig& config);

// Trainable blocks as tape leaves; time encoding stays a constant input.
struct BoundParams {
  Var entity;
  Var relation;
  Var transform;
  Var attention;
  const ModelParams* source = nullptr;

  Var block(std::size_t b) const;
};

BoundParams bind(Tape& tape, const ModelParams& params);
ParamArrays gradients_of(const Gradients& grads, const BoundParams& bound);

class TapeEncoder {
 public:
  TapeEncoder(const EventSource& graph, const BoundParams& params, EncoderConfig config,
              NeighborCache* shared_cache = nullptr);

  Var encode(EntityId entity, Timestamp t);

 private:
  Var encode_layer(EntityId entity, Timestamp t, std::size_t layer);
  struct Key {
    EntityId entity;
    Timestamp time;
    std::size_t layer;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept {
      return (std::hash<Timestamp>()(k.time) * 1000003u ^ std::hash<EntityId>()(k.entity)) * 31u + k.layer;
    }
  };

  BoundParams params_;
  EncoderConfig config_;
  NeighborCache own_cache_;
  NeighborCache& cache_;
  std::unordered_map<Key, Var, KeyHash> memo_;
};

Var score(const BoundParams& params, Var h_s, RelationId relation, Var h_o);

}  // namespace tkgr
