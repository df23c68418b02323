#pragma once

#include <cstddef>
#include <vector>

#include "tkgr/kg.hpp"

namespace tkgr {

struct NeighborEvent {
  EntityId entity = 0;
  RelationId relation = 0;
  Timestamp time = 0;
  std::size_t hop = 1;

  friend bool operator==(const NeighborEvent&, const NeighborEvent&) = default;
};

struct NeighborSet {
  EntityId target = 0;
  Timestamp query_time = 0;
  std::vector<NeighborEvent> events;
};

// t - window, clamped so that very large windows do not overflow.
Timestamp window_start(Timestamp t, Timestamp window);

// Time-bounded breadth-first sampling of multi-hop temporal neighbors.
//
// Starting from `entity`, each dequeued entity contributes its events with
// time in (t - window, t], most recent first, as (counterpart, relation,
// time, hop) tuples. Every counterpart is enqueued at most once and events
// pointing back at the target are skipped. Sampling stops once `budget`
// events are collected or the queue runs dry.
NeighborSet sample_temporal_neighbors(const EventSource& graph, EntityId entity, Timestamp t,
                                      std::size_t budget, Timestamp window);

}  // namespace tkgr
