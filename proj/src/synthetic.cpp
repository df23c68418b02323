#include "tkgr/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "tkgr/error.hpp"

namespace tkgr {

void SyntheticSpec::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("invalid synthetic spec: ") + what);
  };
  require(entities_per_block >= 1, "entities_per_block must be >= 1");
  require(blocks >= 1, "blocks must be >= 1");
  require(relations >= 1, "relations must be >= 1");
  require(horizon >= 1, "horizon must be >= 1");
  require(drift_period >= 1 && drift_period <= horizon, "drift_period must lie in [1, horizon]");
  require(event_rate > 0.0 && event_rate <= 1.0, "event_rate must lie in (0, 1]");
  require(arrival_rate >= 0.0 && std::isfinite(arrival_rate), "arrival_rate must be >= 0");
  require(popularity_skew >= 0.0 && std::isfinite(popularity_skew), "popularity_skew must be >= 0");
  require(repeat_prob >= 0.0 && repeat_prob <= 1.0, "repeat_prob must lie in [0, 1]");
  require(stagger >= 0, "stagger must be >= 0");
}

std::size_t rule_target(const SyntheticSpec& spec, std::size_t subject_block, std::size_t relation, Timestamp t) {
  const auto shifted = t + static_cast<Timestamp>(relation) * spec.stagger;
  const auto phase = static_cast<std::size_t>(shifted / spec.drift_period);
  return (subject_block + relation + phase) % spec.blocks;
}

namespace {

struct Member {
  std::size_t block = 0;
  Timestamp arrival = 0;
  double weight = 1.0;
  std::vector<std::size_t> partners;
};

}  // namespace

SyntheticGraph generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<Member> members;

  // Founders: popularity rank is a random order within each block.
  for (std::size_t b = 0; b < spec.blocks; ++b) {
    std::vector<std::size_t> ranks(spec.entities_per_block);
    for (std::size_t i = 0; i < ranks.size(); ++i) ranks[i] = i;
    std::shuffle(ranks.begin(), ranks.end(), rng);
    for (std::size_t i = 0; i < spec.entities_per_block; ++i) {
      Member m;
      m.block = b;
      m.weight = std::pow(1.0 + static_cast<double>(ranks[i]), -spec.popularity_skew);
      members.push_back(m);
    }
  }
  std::vector<std::size_t> block_size(spec.blocks, spec.entities_per_block);

  std::poisson_distribution<int> arrivals(spec.arrival_rate);
  std::uniform_int_distribution<std::size_t> pick_block(0, spec.blocks - 1);
  std::uniform_int_distribution<std::size_t> pick_relation(0, spec.relations - 1);
  std::bernoulli_distribution emits(spec.event_rate);
  std::bernoulli_distribution repeats(spec.repeat_prob);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  std::vector<NamedQuadruple> records;
  std::vector<double> weights;
  std::vector<std::size_t> candidates;
  for (Timestamp t = 0; t < spec.horizon; ++t) {
    const int arriving = spec.arrival_rate > 0.0 ? arrivals(rng) : 0;
    for (int i = 0; i < arriving; ++i) {
      Member m;
      m.block = pick_block(rng);
      m.arrival = t;
      m.weight = std::pow(1.0 + static_cast<double>(block_size[m.block]), -spec.popularity_skew);
      ++block_size[m.block];
      members.push_back(m);
    }
    const std::size_t active = members.size();
    for (std::size_t s = 0; s < active; ++s) {
      if (!emits(rng)) continue;
      const std::size_t r = pick_relation(rng);
      const std::size_t target = rule_target(spec, members[s].block, r, t);

      std::size_t object = active;
      if (repeats(rng)) {
        candidates.clear();
        for (std::size_t p : members[s].partners) {
          if (members[p].block == target) candidates.push_back(p);
        }
        if (!candidates.empty()) {
          object = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
        }
      }
      if (object == active) {
        candidates.clear();
        weights.clear();
        for (std::size_t o = 0; o < active; ++o) {
          if (o == s || members[o].block != target) continue;
          candidates.push_back(o);
          weights.push_back(members[o].weight);
        }
        if (candidates.empty()) continue;
        std::discrete_distribution<std::size_t> choose(weights.begin(), weights.end());
        object = candidates[choose(rng)];
      }
      if (std::find(members[s].partners.begin(), members[s].partners.end(), object) == members[s].partners.end()) {
        members[s].partners.push_back(object);
      }
      records.push_back({"e" + std::to_string(s), "r" + std::to_string(r), "e" + std::to_string(object), t});
    }
  }

  SyntheticGraph out;
  out.kg = TemporalKG::from_records(records);
  out.block_of.resize(out.kg.num_entities());
  out.arrival.resize(out.kg.num_entities());
  for (std::size_t e = 0; e < out.kg.num_entities(); ++e) {
    const std::size_t index = std::stoul(out.kg.entities().name(static_cast<EntityId>(e)).substr(1));
    out.block_of[e] = members[index].block;
    out.arrival[e] = members[index].arrival;
  }
  out.relation_index.resize(out.kg.num_relations());
  for (std::size_t r = 0; r < out.kg.num_relations(); ++r) {
    out.relation_index[r] = std::stoul(out.kg.relations().name(static_cast<RelationId>(r)).substr(1));
  }
  return out;
}

std::size_t audit_rules(const SyntheticGraph& graph, const SyntheticSpec& spec) {
  std::size_t violations = 0;
  for (const Quadruple& q : graph.kg.quadruples()) {
    const std::size_t r = graph.relation_index.at(static_cast<std::size_t>(q.relation));
    const std::size_t expected = rule_target(spec, graph.block_of.at(static_cast<std::size_t>(q.subject)), r, q.time);
    if (graph.block_of.at(static_cast<std::size_t>(q.object)) != expected) ++violations;
  }
  return violations;
}

}  // namespace tkgr
