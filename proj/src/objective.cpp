#include "tkgr/objective.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "tkgr/error.hpp"

namespace tkgr {

FilterIndex::FilterIndex(std::span<const Quadruple> facts, bool time_aware) : time_aware_(time_aware) {
  keys_.reserve(facts.size());
  for (const Quadruple& q : facts) insert(q);
}

std::size_t FilterIndex::KeyHash::operator()(const Key& k) const noexcept {
  std::size_t h = std::hash<std::int64_t>()(k.t);
  h = h * 1000003u ^ static_cast<std::size_t>(k.s);
  h = h * 1000003u ^ static_cast<std::size_t>(k.r);
  h = h * 1000003u ^ static_cast<std::size_t>(k.o);
  return h;
}

FilterIndex::Key FilterIndex::key_of(const Quadruple& q) const {
  return {q.subject, q.relation, q.object, time_aware_ ? q.time : 0};
}

void FilterIndex::insert(const Quadruple& q) { keys_.insert(key_of(q)); }

bool FilterIndex::contains(const Quadruple& q) const { return keys_.contains(key_of(q)); }

Side opposite(Side side) noexcept { return side == Side::kSubject ? Side::kObject : Side::kSubject; }

namespace {

Quadruple with_slot(Quadruple q, Side slot, EntityId e) {
  (slot == Side::kSubject ? q.subject : q.object) = e;
  return q;
}

EntityId slot_of(const Quadruple& q, Side slot) { return slot == Side::kSubject ? q.subject : q.object; }

}  // namespace

std::vector<Quadruple> sample_negatives(std::size_t num_entities, const Quadruple& positive, Side corrupt,
                                        std::size_t n, std::mt19937_64& rng, const FilterIndex* filter) {
  if (n == 0) throw ArgumentError("sample_negatives: n must be at least 1");
  if (num_entities < 2) throw ArgumentError("sample_negatives: need at least 2 entities");
  const EntityId truth = slot_of(positive, corrupt);
  if (truth < 0 || static_cast<std::size_t>(truth) >= num_entities) {
    throw ArgumentError("sample_negatives: true entity outside the candidate range");
  }
  constexpr int kMaxRedraws = 10;
  std::uniform_int_distribution<std::size_t> pick(0, num_entities - 2);
  std::vector<Quadruple> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Quadruple neg;
    for (int attempt = 0;; ++attempt) {
      auto e = static_cast<EntityId>(pick(rng));
      if (e >= truth) ++e;
      neg = with_slot(positive, corrupt, e);
      if (filter == nullptr || attempt >= kMaxRedraws || !filter->contains(neg)) break;
    }
    out.push_back(neg);
  }
  return out;
}

double hinge_loss(std::span<const double> pos_scores, std::span<const std::vector<double>> neg_scores,
                  double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("hinge_loss: margin must be positive");
  if (pos_scores.size() != neg_scores.size()) throw ArgumentError("hinge_loss: one negative group per positive");
  double total = 0.0;
  for (std::size_t i = 0; i < pos_scores.size(); ++i) {
    if (neg_scores[i].empty()) throw ArgumentError("hinge_loss: positive without negatives");
    for (double neg : neg_scores[i]) total += std::max(gamma - pos_scores[i] + neg, 0.0);
  }
  return total;
}

Var hinge_loss(Var pos_score, std::span<const Var> neg_scores, double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("hinge_loss: margin must be positive");
  if (neg_scores.empty()) throw ArgumentError("hinge_loss: positive without negatives");
  std::vector<Var> margins;
  margins.reserve(neg_scores.size());
  for (const Var& neg : neg_scores) margins.push_back(sub(neg, pos_score));
  return sum(relu(add_scalar(concat(margins), gamma)));
}

RankedQuery rank_from_scores(std::span<const double> scores, const Quadruple& query, Side masked,
                             const FilterIndex* filter) {
  const EntityId truth = slot_of(query, masked);
  if (truth < 0 || static_cast<std::size_t>(truth) >= scores.size()) {
    throw ArgumentError("rank: true entity " + std::to_string(truth) + " is not a candidate");
  }
  const double target = scores[static_cast<std::size_t>(truth)];
  RankedQuery out;
  out.query = query;
  out.masked = masked;
  out.true_entity = truth;
  out.rank = 1;
  out.candidate_count = 1;
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const auto e = static_cast<EntityId>(c);
    if (e == truth) continue;
    if (filter != nullptr && filter->contains(with_slot(query, masked, e))) continue;
    ++out.candidate_count;
    if (scores[c] >= target) ++out.rank;
  }
  return out;
}

RankedQuery rank_query(ValueEncoder& encoder, const ModelParams& params, const Quadruple& query, Side masked,
                       const FilterIndex* filter, Timestamp history_lag) {
  const std::size_t n = params.num_entities();
  const EntityId truth = slot_of(query, masked);
  if (truth < 0 || static_cast<std::size_t>(truth) >= n) {
    throw ArgumentError("rank_query: true entity " + std::to_string(truth) + " is not in the embedding table");
  }
  const Timestamp t = query.time - history_lag;
  const EntityId anchor = masked == Side::kObject ? query.subject : query.object;
  const Tensor h_anchor = encoder.encode(anchor, t);
  std::vector<double> scores(n);
  for (std::size_t c = 0; c < n; ++c) {
    const Tensor& h_c = encoder.encode(static_cast<EntityId>(c), t);
    scores[c] = masked == Side::kObject ? score(params, h_anchor.values(), query.relation, h_c.values())
                                        : score(params, h_c.values(), query.relation, h_anchor.values());
  }
  return rank_from_scores(scores, query, masked, filter);
}

namespace {

struct Accumulator {
  double rr = 0.0;
  std::size_t h1 = 0;
  std::size_t h3 = 0;
  std::size_t h10 = 0;
  std::size_t n = 0;

  void add(std::size_t rank) {
    rr += 1.0 / static_cast<double>(rank);
    h1 += rank <= 1;
    h3 += rank <= 3;
    h10 += rank <= 10;
    ++n;
  }
  template <typename Out>
  void write(Out& out) const {
    const auto count = static_cast<double>(n);
    out.mrr = rr / count;
    out.hits1 = static_cast<double>(h1) / count;
    out.hits3 = static_cast<double>(h3) / count;
    out.hits10 = static_cast<double>(h10) / count;
    out.query_count = n;
  }
};

}  // namespace

MetricsReport aggregate_metrics(std::span<const RankedQuery> ranked) {
  if (ranked.empty()) throw ArgumentError("aggregate_metrics: no ranked queries");
  Accumulator all;
  std::map<std::size_t, Accumulator> by_interval;
  for (const RankedQuery& q : ranked) {
    if (q.rank < 1 || q.rank > q.candidate_count) throw ArgumentError("aggregate_metrics: rank out of range");
    all.add(q.rank);
    by_interval[q.interval].add(q.rank);
  }
  MetricsReport report;
  all.write(report);
  for (const auto& [interval, acc] : by_interval) acc.write(report.per_interval[interval]);
  report.random_mrr = uniform_expected_mrr(ranked);
  return report;
}

double uniform_expected_mrr(std::span<const RankedQuery> ranked) {
  if (ranked.empty()) throw ArgumentError("uniform_expected_mrr: no ranked queries");
  // Harmonic numbers cached up to the largest candidate count.
  std::vector<double> harmonic(1, 0.0);
  double total = 0.0;
  for (const RankedQuery& q : ranked) {
    while (harmonic.size() <= q.candidate_count) {
      harmonic.push_back(harmonic.back() + 1.0 / static_cast<double>(harmonic.size()));
    }
    total += harmonic[q.candidate_count] / static_cast<double>(q.candidate_count);
  }
  return total / static_cast<double>(ranked.size());
}

namespace {

nlohmann::json interval_json(const IntervalMetrics& m) {
  return {{"mrr", m.mrr}, {"hits1", m.hits1}, {"hits3", m.hits3}, {"hits10", m.hits10},
          {"query_count", m.query_count}};
}

}  // namespace

nlohmann::json metrics_to_json(const MetricsReport& report) {
  nlohmann::json j;
  j["mrr"] = report.mrr;
  j["hits1"] = report.hits1;
  j["hits3"] = report.hits3;
  j["hits10"] = report.hits10;
  j["query_count"] = report.query_count;
  j["random_mrr"] = report.random_mrr;
  j["per_interval"] = nlohmann::json::object();
  for (const auto& [interval, m] : report.per_interval) j["per_interval"][std::to_string(interval)] = interval_json(m);
  return j;
}

MetricsReport metrics_from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.mrr = j.at("mrr").get<double>();
    r.hits1 = j.at("hits1").get<double>();
    r.hits3 = j.at("hits3").get<double>();
    r.hits10 = j.at("hits10").get<double>();
    r.query_count = j.at("query_count").get<std::size_t>();
    r.random_mrr = j.value("random_mrr", 0.0);
    for (const auto& [key, v] : j.at("per_interval").items()) {
      IntervalMetrics m;
      m.mrr = v.at("mrr").get<double>();
      m.hits1 = v.at("hits1").get<double>();
      m.hits3 = v.at("hits3").get<double>();
      m.hits10 = v.at("hits10").get<double>();
      m.query_count = v.at("query_count").get<std::size_t>();
      r.per_interval[std::stoul(key)] = m;
    }
    return r;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("malformed metrics: ") + e.what());
  }
}

std::string metrics_csv_header() { return "mrr,hits1,hits3,hits10,query_count"; }

std::string metrics_csv_row(const MetricsReport& report) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << report.mrr << ',' << report.hits1 << ',' << report.hits3 << ',' << report.hits10 << ','
      << report.query_count;
  return out.str();
}

namespace {

void check_block(const nlohmann::json& j, const std::string& where, std::vector<std::string>& errors) {
  if (!j.is_object()) {
    errors.push_back(where + ": expected an object");
    return;
  }
  for (const char* key : {"mrr", "hits1", "hits3", "hits10"}) {
    if (!j.contains(key)) {
      errors.push_back(where + ": missing " + key);
    } else if (!j[key].is_number()) {
      errors.push_back(where + "." + key + ": expected a number");
    } else {
      const double v = j[key].get<double>();
      if (!(v >= 0.0 && v <= 1.0)) errors.push_back(where + "." + key + ": outside [0, 1]");
    }
  }
  if (!j.contains("query_count")) {
    errors.push_back(where + ": missing query_count");
  } else if (!j["query_count"].is_number_unsigned() || j["query_count"].get<std::size_t>() < 1) {
    errors.push_back(where + ".query_count: expected a positive integer");
  }
  if (errors.empty()) {
    const double h1 = j["hits1"], h3 = j["hits3"], h10 = j["hits10"], mrr = j["mrr"];
    if (h1 > h3 || h3 > h10) errors.push_back(where + ": hits not monotone in k");
    if (mrr < h1) errors.push_back(where + ": mrr below hits1");
  }
}

}  // namespace

std::vector<std::string> validate_metrics_json(const nlohmann::json& j) {
  std::vector<std::string> errors;
  check_block(j, "$", errors);
  if (!j.is_object()) return errors;
  if (j.contains("random_mrr") && !j["random_mrr"].is_number()) errors.push_back("$.random_mrr: expected a number");
  if (!j.contains("per_interval") || !j["per_interval"].is_object()) {
    errors.push_back("$: missing per_interval object");
    return errors;
  }
  for (const auto& [key, v] : j["per_interval"].items()) {
    if (key.empty() || key.find_first_not_of("0123456789") != std::string::npos || key == "0") {
      errors.push_back("$.per_interval: key '" + key + "' is not a positive interval index");
    }
    check_block(v, "$.per_interval." + key, errors);
  }
  for (const auto& [key, v] : j.items()) {
    static const std::vector<std::string> known = {"mrr",         "hits1",        "hits3",     "hits10",
                                                   "query_count", "per_interval", "random_mrr"};
    if (std::find(known.begin(), known.end(), key) == known.end()) errors.push_back("$: unexpected field " + key);
  }
  return errors;
}

}  // namespace tkgr
