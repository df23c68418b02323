#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>

#include "support.hpp"
#include "tkgr/error.hpp"
#include "tkgr/objective.hpp"

using namespace tkgr;
using tkgr::testing::random_kg;
using tkgr::testing::random_params;

namespace {

RankedQuery ranked(std::size_t rank, std::size_t candidates, std::size_t interval = 1) {
  RankedQuery q;
  q.rank = rank;
  q.candidate_count = candidates;
  q.interval = interval;
  return q;
}

// Sort every surviving candidate by score, worst case for ties, and read
// off the position of the true entity.
std::size_t full_sort_rank(std::span<const double> scores, const Quadruple& query, Side masked,
                           const FilterIndex* filter) {
  const EntityId truth = masked == Side::kObject ? query.object : query.subject;
  std::vector<std::pair<double, int>> kept;  // (score, is_true)
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const auto e = static_cast<EntityId>(c);
    Quadruple q = query;
    (masked == Side::kObject ? q.object : q.subject) = e;
    if (e != truth && filter != nullptr && filter->contains(q)) continue;
    kept.emplace_back(scores[c], e == truth ? 1 : 0);
  }
  // Descending score; among equal scores the true entity goes last.
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (kept[i].second == 1) return i + 1;
  }
  return 0;
}

}  // namespace

TEST_SUITE("objective") {

TEST_CASE("negatives: contract on a 4-entity vocabulary") {
  std::mt19937_64 rng(1);
  const Quadruple pos{0, 0, 1, 5};
  const auto negs = sample_negatives(4, pos, Side::kObject, 2, rng);
  REQUIRE(negs.size() == 2);
  for (const Quadruple& q : negs) {
    CHECK(q.subject == 0);
    CHECK(q.relation == 0);
    CHECK(q.time == 5);
    CHECK(q.object != 1);
    CHECK(q.object >= 0);
    CHECK(q.object < 4);
  }
  CHECK_THROWS_AS(sample_negatives(4, pos, Side::kObject, 0, rng), ArgumentError);
  CHECK_THROWS_AS(sample_negatives(1, Quadruple{0, 0, 0, 1}, Side::kObject, 3, rng), ArgumentError);
}

TEST_CASE("negatives: deterministic given the seed") {
  std::mt19937_64 a(42), b(42);
  const Quadruple pos{2, 1, 3, 9};
  CHECK(sample_negatives(50, pos, Side::kSubject, 20, a) == sample_negatives(50, pos, Side::kSubject, 20, b));
}

TEST_CASE("negatives: uniform over the eligible entities (chi-square)") {
  std::mt19937_64 rng(7);
  const Quadruple pos{0, 0, 1, 5};
  std::vector<double> counts(4, 0.0);
  const std::size_t draws = 10000;
  for (const Quadruple& q : sample_negatives(4, pos, Side::kObject, draws, rng)) counts[static_cast<std::size_t>(q.object)] += 1;
  CHECK(counts[1] == 0.0);
  const double expected = static_cast<double>(draws) / 3.0;
  double chi2 = 0.0;
  for (std::size_t e : {std::size_t{0}, std::size_t{2}, std::size_t{3}}) {
    chi2 += (counts[e] - expected) * (counts[e] - expected) / expected;
    // Within 3 sigma of a binomial(n, 1/3).
    CHECK(std::abs(counts[e] - expected) < 3.0 * std::sqrt(draws * (1.0 / 3.0) * (2.0 / 3.0)));
  }
  // 2 degrees of freedom, 99.9th percentile.
  CHECK(chi2 < 13.82);
}

TEST_CASE("negatives: subject corruption and optional filtering") {
  std::mt19937_64 rng(3);
  const Quadruple pos{0, 0, 1, 5};
  for (const Quadruple& q : sample_negatives(10, pos, Side::kSubject, 50, rng)) {
    CHECK(q.subject != 0);
    CHECK(q.object == 1);
  }
  FilterIndex known(false);
  for (EntityId o = 2; o < 4; ++o) known.insert({0, 0, o, 1});
  std::size_t hits = 0;
  for (const Quadruple& q : sample_negatives(10, pos, Side::kObject, 200, rng, &known)) hits += known.contains(q);
  CHECK(hits == 0);
}

TEST_CASE("hinge loss examples") {
  const std::vector<double> p1{-0.1};
  const std::vector<std::vector<double>> n1{{-5.0}};
  CHECK(hinge_loss(p1, n1, 0.5) == 0.0);
  const std::vector<double> p2{-0.2};
  const std::vector<std::vector<double>> n2{{-0.4}};
  CHECK(hinge_loss(p2, n2, 0.5) == doctest::Approx(0.3).epsilon(1e-15));

  const std::vector<double> p3{-1.0, -0.5};
  const std::vector<std::vector<double>> n3{{-1.2, -3.0}, {-0.1, -0.6}};
  const double expected = std::max(0.5 + 1.0 - 1.2, 0.0) + std::max(0.5 + 1.0 - 3.0, 0.0) +
                          std::max(0.5 + 0.5 - 0.1, 0.0) + std::max(0.5 + 0.5 - 0.6, 0.0);
  CHECK(hinge_loss(p3, n3, 0.5) == doctest::Approx(expected).epsilon(1e-15));

  CHECK_THROWS_AS(hinge_loss(p1, n1, 0.0), ConfigError);
  const std::vector<std::vector<double>> empty_group{{}};
  CHECK_THROWS_AS(hinge_loss(p1, empty_group, 0.5), ArgumentError);
}

TEST_CASE("hinge loss: tape and value forms agree; zero iff all margins hold") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double pos = normal(rng);
    std::vector<double> neg(4);
    for (double& v : neg) v = normal(rng);
    Tape tape;
    const Var pv = tape.leaf(Tensor::scalar(pos));
    std::vector<Var> nv;
    for (double v : neg) nv.push_back(tape.leaf(Tensor::scalar(v)));
    const double value = hinge_loss(pv, nv, 0.5).scalar();
    const std::vector<double> ps{pos};
    const std::vector<std::vector<double>> ns{neg};
    CHECK(value == doctest::Approx(hinge_loss(ps, ns, 0.5)).epsilon(1e-14));
    CHECK(value >= 0.0);
    const bool satisfied = std::all_of(neg.begin(), neg.end(), [&](double n) { return pos - n >= 0.5; });
    CHECK((value == 0.0) == satisfied);
  }
}

TEST_CASE("rank: unique maximum, full filter, pessimistic ties") {
  const Quadruple q{0, 0, 2, 3};
  const std::vector<double> s1{-3.0, -2.0, -0.1, -1.0};
  const RankedQuery r1 = rank_from_scores(s1, q, Side::kObject, nullptr);
  CHECK(r1.rank == 1);
  CHECK(r1.candidate_count == 4);

  FilterIndex all(false);
  for (EntityId o = 0; o < 4; ++o) all.insert({0, 0, o, 7});
  const std::vector<double> s2{5.0, 5.0, -9.0, 5.0};
  const RankedQuery r2 = rank_from_scores(s2, q, Side::kObject, &all);
  CHECK(r2.rank == 1);
  CHECK(r2.candidate_count == 1);

  const std::vector<double> s3{-1.0, -1.0, -1.0, -4.0};
  CHECK(rank_from_scores(s3, q, Side::kObject, nullptr).rank == 3);
}

TEST_CASE("rank: filtering never worsens a rank; invariant under monotone maps") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> scores(12);
    for (double& v : scores) v = std::round(normal(rng) * 4.0) / 4.0;
    const Quadruple q{static_cast<EntityId>(trial % 12), 1, static_cast<EntityId>((trial * 5) % 12), 4};
    FilterIndex f(false);
    for (EntityId o = 0; o < 12; o += 3) f.insert({q.subject, 1, o, 0});
    const RankedQuery raw = rank_from_scores(scores, q, Side::kObject, nullptr);
    const RankedQuery filtered = rank_from_scores(scores, q, Side::kObject, &f);
    CHECK(filtered.rank <= raw.rank);
    CHECK(filtered.rank >= 1);
    CHECK(filtered.rank <= filtered.candidate_count);
    std::vector<double> mapped(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) mapped[i] = std::exp(3.0 * scores[i]) - 7.0;
    CHECK(rank_from_scores(mapped, q, Side::kObject, &f).rank == filtered.rank);
  }
}

TEST_CASE("rank_query agrees with a full-sort oracle on toy graphs") {
  std::mt19937_64 rng(99);
  std::size_t checked = 0;
  for (int g = 0; checked < 500; ++g) {
    const TemporalKG kg = random_kg(rng, 5 + static_cast<std::size_t>(g % 6), 2, 40, 20);
    const ModelParams p = random_params(kg.num_entities(), kg.num_relations(), 2, static_cast<std::uint64_t>(g));
    const FilterIndex filter(kg.quadruples(), g % 2 == 0);
    ValueEncoder enc(kg, p, {1, 4, 8});
    for (std::size_t i = 0; i < kg.num_quadruples() && checked < 500; i += 4) {
      const Quadruple& q = kg.quadruple(i);
      for (Side side : {Side::kObject, Side::kSubject}) {
        const RankedQuery r = rank_query(enc, p, q, side, &filter, 1);
        const Timestamp t = q.time - 1;
        std::vector<double> scores(kg.num_entities());
        for (std::size_t c = 0; c < scores.size(); ++c) {
          const auto e = static_cast<EntityId>(c);
          const Tensor hs = encode_entity(kg, p, side == Side::kObject ? q.subject : e, t, {1, 4, 8});
          const Tensor ho = encode_entity(kg, p, side == Side::kObject ? e : q.object, t, {1, 4, 8});
          scores[c] = score(p, hs.values(), q.relation, ho.values());
        }
        CHECK(r.rank == full_sort_rank(scores, q, side, &filter));
        CHECK(r.true_entity == (side == Side::kObject ? q.object : q.subject));
        ++checked;
      }
    }
  }
}

TEST_CASE("rank_query: true entity outside the table") {
  const TemporalKG kg = tkgr::testing::kg_from_text("a\tr\tb\t1\nb\tr\tc\t2\n");
  const ModelParams p = random_params(2, 1, 2, 1);
  ValueEncoder enc(kg, p, {1, 4, 8});
  CHECK_THROWS_AS(rank_query(enc, p, Quadruple{0, 0, 2, 2}, Side::kObject, nullptr, 1), ArgumentError);
}

TEST_CASE("metrics for ranks 1, 2, 4") {
  const std::vector<RankedQuery> r{ranked(1, 10), ranked(2, 10), ranked(4, 10)};
  const MetricsReport m = aggregate_metrics(r);
  CHECK(m.mrr == doctest::Approx(0.5833333333333334).epsilon(1e-12));
  CHECK(m.hits1 == doctest::Approx(1.0 / 3.0));
  CHECK(m.hits3 == doctest::Approx(2.0 / 3.0));
  CHECK(m.hits10 == 1.0);
  CHECK(m.query_count == 3);
}

TEST_CASE("metrics: all ranks 1, empty list") {
  const std::vector<RankedQuery> r{ranked(1, 3), ranked(1, 7)};
  const MetricsReport m = aggregate_metrics(r);
  CHECK(m.mrr == 1.0);
  CHECK(m.hits1 == 1.0);
  CHECK(m.hits10 == 1.0);
  CHECK_THROWS_AS(aggregate_metrics(std::vector<RankedQuery>{}), ArgumentError);
}

TEST_CASE("metrics match a one-pass recomputation on 1000 random ranks") {
  std::mt19937_64 rng(55);
  std::uniform_int_distribution<std::size_t> pick_n(1, 60);
  std::uniform_int_distribution<std::size_t> pick_m(1, 3);
  std::vector<RankedQuery> r;
  for (int i = 0; i < 1000; ++i) {
    const std::size_t n = pick_n(rng);
    r.push_back(ranked(std::uniform_int_distribution<std::size_t>(1, n)(rng), n, pick_m(rng)));
  }
  double rr = 0, h1 = 0, h3 = 0, h10 = 0, rnd = 0;
  std::map<std::size_t, std::pair<double, std::size_t>> per;
  for (const auto& q : r) {
    rr += 1.0 / static_cast<double>(q.rank);
    h1 += q.rank <= 1;
    h3 += q.rank <= 3;
    h10 += q.rank <= 10;
    double harmonic = 0.0;
    for (std::size_t k = 1; k <= q.candidate_count; ++k) harmonic += 1.0 / static_cast<double>(k);
    rnd += harmonic / static_cast<double>(q.candidate_count);
    per[q.interval].first += 1.0 / static_cast<double>(q.rank);
    ++per[q.interval].second;
  }
  const MetricsReport m = aggregate_metrics(r);
  CHECK(m.mrr == doctest::Approx(rr / 1000).epsilon(1e-12));
  CHECK(m.hits1 == doctest::Approx(h1 / 1000).epsilon(1e-12));
  CHECK(m.hits3 == doctest::Approx(h3 / 1000).epsilon(1e-12));
  CHECK(m.hits10 == doctest::Approx(h10 / 1000).epsilon(1e-12));
  CHECK(m.random_mrr == doctest::Approx(rnd / 1000).epsilon(1e-12));
  REQUIRE(m.per_interval.size() == per.size());
  for (const auto& [k, v] : per) {
    CHECK(m.per_interval.at(k).mrr == doctest::Approx(v.first / static_cast<double>(v.second)).epsilon(1e-12));
    CHECK(m.per_interval.at(k).query_count == v.second);
  }
  CHECK(m.hits1 <= m.hits3);
  CHECK(m.hits3 <= m.hits10);
  CHECK(m.hits1 <= m.mrr);
  CHECK(m.mrr <= 1.0);
}

TEST_CASE("metrics JSON round trip, CSV shape and schema checks") {
  const std::vector<RankedQuery> r{ranked(1, 10, 1), ranked(3, 10, 2), ranked(12, 20, 3)};
  const MetricsReport m = aggregate_metrics(r);
  const nlohmann::json j = metrics_to_json(m);
  CHECK(validate_metrics_json(j).empty());
  const MetricsReport back = metrics_from_json(j);
  CHECK(back.mrr == m.mrr);
  CHECK(back.query_count == m.query_count);
  CHECK(back.per_interval.size() == 3);
  CHECK(metrics_csv_header() == "mrr,hits1,hits3,hits10,query_count");
  const std::string row = metrics_csv_row(m);
  CHECK(std::count(row.begin(), row.end(), ',') == 4);

  nlohmann::json bad = j;
  bad["hits1"] = 0.9;
  CHECK_FALSE(validate_metrics_json(bad).empty());
  bad = j;
  bad.erase("mrr");
  CHECK_FALSE(validate_metrics_json(bad).empty());
  bad = j;
  bad["per_interval"]["0"] = j["per_interval"]["1"];
  CHECK_FALSE(validate_metrics_json(bad).empty());
  bad = j;
  bad["extra"] = 1;
  CHECK_FALSE(validate_metrics_json(bad).empty());
  bad = j;
  bad["query_count"] = 0;
  CHECK_FALSE(validate_metrics_json(bad).empty());
}

TEST_CASE("uniform expectation is H_n / n") {
  const std::vector<RankedQuery> r{ranked(1, 1), ranked(1, 4)};
  CHECK(uniform_expected_mrr(r) == doctest::Approx((1.0 + (1 + 0.5 + 1.0 / 3 + 0.25) / 4) / 2).epsilon(1e-14));
}

}  // TEST_SUITE
