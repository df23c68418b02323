#pragma once

// Block-structured temporal KG generator with a rotating relational rule.
//
// Entities belong to blocks. An event (s, r, o, t) always has o in block
//   (block(s) + r + phase(r, t)) mod blocks,  phase(r, t) = floor((t + r * stagger) / drift_period)
// so the block a relation points to rotates every drift period.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tkgr/kg.hpp"

namespace tkgr {

struct SyntheticSpec {
  std::size_t entities_per_block = 30;
  std::size_t blocks = 2;
  std::size_t relations = 4;
  // Probability that an active entity emits an event at a time step.
  double event_rate = 0.3;
  Timestamp horizon = 100;
  Timestamp drift_period = 25;
  // Mean number of new entities per time step (Poisson).
  double arrival_rate = 1.0;
  std::uint64_t seed = 0;
  // Zipf exponent of object popularity within a block.
  double popularity_skew = 1.0;
  // Chance of re-using an earlier partner that satisfies the current rule.
  double repeat_prob = 0.5;
  // Per-relation phase offset in time steps.
  Timestamp stagger = 0;

  // Throws ConfigError for counts < 1, drift_period outside [1, horizon], or
  // rates outside their ranges.
  void validate() const;
};

struct SyntheticGraph {
  TemporalKG kg;
  std::vector<std::size_t> block_of;         // per kg entity id
  std::vector<std::size_t> relation_index;   // per kg relation id, the generator's r
  std::vector<Timestamp> arrival;            // per kg entity id
};

// Pure function of the spec.
SyntheticGraph generate_synthetic(const SyntheticSpec& spec);

std::size_t rule_target(const SyntheticSpec& spec, std::size_t subject_block, std::size_t relation, Timestamp t);

// Number of events that break the rule.
std::size_t audit_rules(const SyntheticGraph& graph, const SyntheticSpec& spec);

}  // namespace tkgr
