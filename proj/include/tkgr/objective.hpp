#pragma once

// Negative sampling, the margin ranking loss, and filtered ranking metrics.

#include <cstddef>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "tkgr/encoder.hpp"
#include "tkgr/kg.hpp"
#include "tkgr/tape.hpp"

namespace tkgr {

// Known-true facts used to filter ranking candidates (and optionally
// negatives). Time-unaware by default: (s, r, o) at any time counts.
class FilterIndex {
 public:
  explicit FilterIndex(bool time_aware = false) : time_aware_(time_aware) {}
  FilterIndex(std::span<const Quadruple> facts, bool time_aware);

  void insert(const Quadruple& q);
  bool contains(const Quadruple& q) const;
  bool time_aware() const noexcept { return time_aware_; }
  std::size_t size() const noexcept { return keys_.size(); }

 private:
  struct Key {
    EntityId s;
    RelationId r;
    EntityId o;
    Timestamp t;
    friend bool operator==(const Key&, const Key&) = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const noexcept;
  };
  Key key_of(const Quadruple& q) const;

  bool time_aware_;
  std::unordered_set<Key, KeyHash> keys_;
};

// The slot opposite the one the entity occupies.
Side opposite(Side side) noexcept;

// n corruptions of `positive` at `corrupt`, each drawn uniformly from the
// num_entities - 1 ids different from the true one, with replacement.
// With `filter` set, draws that form a known fact are redrawn (a bounded
// number of times). Throws ArgumentError for n == 0 or num_entities < 2.
std::vector<Quadruple> sample_negatives(std::size_t num_entities, const Quadruple& positive, Side corrupt,
                                        std::size_t n, std::mt19937_64& rng,
                                        const FilterIndex* filter = nullptr);

// sum_i sum_j max(gamma - pos_i + neg_ij, 0). Throws ConfigError for gamma <= 0
// and ArgumentError when a positive has no negatives.
double hinge_loss(std::span<const double> pos_scores, std::span<const std::vector<double>> neg_scores,
                  double gamma);
// Tape version for a single positive: sum_j relu(gamma - pos + neg_j).
Var hinge_loss(Var pos_score, std::span<const Var> neg_scores, double gamma);

struct RankedQuery {
  Quadruple query;
  Side masked = Side::kObject;
  EntityId true_entity = 0;
  std::size_t rank = 1;
  std::size_t candidate_count = 1;
  std::size_t interval = 0;
};

// Rank of the true entity among candidates 0..scores.size()-1. Candidates
// other than the true entity whose completion is in `filter` are dropped.
// Ties count against the true entity.
RankedQuery rank_from_scores(std::span<const double> scores, const Quadruple& query, Side masked,
                             const FilterIndex* filter);

// Scores every entity of the embedding table in the masked slot of `query`
// and returns its filtered rank. Entities are encoded at time
// query.time - history_lag. The encoder must wrap `params`.
RankedQuery rank_query(ValueEncoder& encoder, const ModelParams& params, const Quadruple& query, Side masked,
                       const FilterIndex* filter, Timestamp history_lag);

struct IntervalMetrics {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  std::size_t query_count = 0;
};

struct MetricsReport {
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
  std::size_t query_count = 0;
  // Keyed by 1-based query interval.
  std::map<std::size_t, IntervalMetrics> per_interval;
  // Expected MRR of a uniform ranking over the same candidate sets.
  double random_mrr = 0.0;
};

// Throws ArgumentError for an empty list.
MetricsReport aggregate_metrics(std::span<const RankedQuery> ranked);

// Mean over queries of H_n / n, the expected reciprocal rank when the true
// entity lands uniformly among its n filtered candidates.
double uniform_expected_mrr(std::span<const RankedQuery> ranked);

nlohmann::json metrics_to_json(const MetricsReport& report);
MetricsReport metrics_from_json(const nlohmann::json& j);
std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsReport& report);

// Structural check against schemas/metrics.schema.json. Returns the list of
// violations; empty means valid.
std::vector<std::string> validate_metrics_json(const nlohmann::json& j);

}  // namespace tkgr
