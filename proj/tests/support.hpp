#pragma once

// Shared fixtures for the unit and acceptance tests.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tkgr/encoder.hpp"
#include "tkgr/kg.hpp"
#include "tkgr/meta.hpp"
#include "tkgr/objective.hpp"
#include "tkgr/params.hpp"

namespace tkgr::testing {

inline TemporalKG kg_from_text(const std::string& text) {
  std::istringstream in(text);
  return ingest_tsv(in);
}

// Uniform random graph: `entities` names e0.., `relations` names r0..,
// timestamps in [0, horizon]. Self-loops allowed when `self_loops` is set.
inline TemporalKG random_kg(std::mt19937_64& rng, std::size_t entities, std::size_t relations, std::size_t events,
                            Timestamp horizon, bool self_loops = false) {
  std::uniform_int_distribution<std::size_t> pick_e(0, entities - 1);
  std::uniform_int_distribution<std::size_t> pick_r(0, relations - 1);
  std::uniform_int_distribution<Timestamp> pick_t(0, horizon);
  std::vector<NamedQuadruple> records;
  while (records.size() < events) {
    const std::size_t s = pick_e(rng);
    const std::size_t o = pick_e(rng);
    if (s == o && !self_loops) continue;
    records.push_back({"e" + std::to_string(s), "r" + std::to_string(pick_r(rng)), "e" + std::to_string(o), pick_t(rng)});
  }
  return TemporalKG::from_records(records);
}

// Parameters with every trainable coordinate drawn from N(0, scale^2).
inline ModelParams random_params(std::size_t entities, std::size_t relations, std::size_t dim, std::uint64_t seed,
                                 double scale = 0.5) {
  ModelParams p = init_params(entities, relations, dim, seed);
  std::mt19937_64 rng(seed + 17);
  std::normal_distribution<double> normal(0.0, scale);
  for (Tensor& t : p.trainable) {
    for (double& v : t.values()) v = normal(rng);
  }
  return p;
}

// Summed hinge loss over fixed examples, built from four leaves holding the
// trainable blocks of `base` (in Block order). For grad_check.
inline Var example_loss_on(std::span<const Var> leaves, const ModelParams& base, NeighborCache& cache,
                           std::span<const TrainingExample> examples, const TrainConfig& config) {
  BoundParams bound{leaves[0], leaves[1], leaves[2], leaves[3], &base};
  TapeEncoder encoder(cache.graph(), bound, config.encoder(), &cache);
  std::vector<Var> losses;
  for (const TrainingExample& ex : examples) {
    const Timestamp t = ex.fact.time - config.history_lag;
    const bool object_side = ex.corrupt == Side::kObject;
    const Var anchor = encoder.encode(object_side ? ex.fact.subject : ex.fact.object, t);
    auto score_with = [&](EntityId c) {
      const Var h = encoder.encode(c, t);
      return object_side ? score(bound, anchor, ex.fact.relation, h) : score(bound, h, ex.fact.relation, anchor);
    };
    const Var pos = score_with(object_side ? ex.fact.object : ex.fact.subject);
    std::vector<Var> negs;
    for (EntityId e : ex.negatives) negs.push_back(score_with(e));
    losses.push_back(hinge_loss(pos, negs, config.margin));
  }
  return sum(concat(losses));
}

}  // namespace tkgr::testing
