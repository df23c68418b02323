#include "tkgr/sampler.hpp"

#include <deque>
#include <limits>
#include <string>

#include "tkgr/error.hpp"

namespace tkgr {

Timestamp window_start(Timestamp t, Timestamp window) {
  if (window < 0) throw ArgumentError("negative time window");
  constexpr Timestamp lowest = std::numeric_limits<Timestamp>::min();
  if (t < 0 && window > t - lowest) return lowest;
  return t - window;
}

NeighborSet sample_temporal_neighbors(const EventSource& graph, EntityId entity, Timestamp t,
                                      std::size_t budget, Timestamp window) {
  if (entity < 0 || static_cast<std::size_t>(entity) >= graph.num_entities()) {
    throw ArgumentError("sampler: unknown entity id " + std::to_string(entity));
  }
  const Timestamp after = window_start(t, window);

  NeighborSet out;
  out.target = entity;
  out.query_time = t;
  if (budget == 0) return out;

  std::vector<bool> visited(graph.num_entities(), false);
  std::deque<std::pair<EntityId, std::size_t>> queue;
  visited[static_cast<std::size_t>(entity)] = true;
  queue.emplace_back(entity, 0);

  while (!queue.empty() && out.events.size() < budget) {
    const auto [current, hop] = queue.front();
    queue.pop_front();
    const auto events = graph.events_between(current, after, t);
    for (auto it = events.rbegin(); it != events.rend() && out.events.size() < budget; ++it) {
      if (it->counterpart == entity) continue;
      out.events.push_back({it->counterpart, it->relation, it->time, hop + 1});
      if (!visited[static_cast<std::size_t>(it->counterpart)]) {
        visited[static_cast<std::size_t>(it->counterpart)] = true;
        queue.emplace_back(it->counterpart, hop + 1);
      }
    }
  }
  return out;
}

}  // namespace tkgr
