#include "tkgr/kg.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "tkgr/error.hpp"

namespace tkgr {

std::int32_t Vocabulary::intern(std::string_view name) {
  auto it = ids_.find(std::string(name));
  if (it != ids_.end()) return it->second;
  const auto id = static_cast<std::int32_t>(names_.size());
  names_.emplace_back(name);
  ids_.emplace(names_.back(), id);
  return id;
}

std::optional<std::int32_t> Vocabulary::find(std::string_view name) const {
  auto it = ids_.find(std::string(name));
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

TemporalKG TemporalKG::from_records(std::span<const NamedQuadruple> records) {
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return records[a].time < records[b].time; });

  TemporalKG kg;
  kg.quads_.reserve(records.size());
  for (std::size_t i : order) {
    const NamedQuadruple& rec = records[i];
    if (rec.time < 0) throw ArgumentError("negative timestamp for " + rec.subject);
    Quadruple q;
    q.subject = kg.entities_.intern(rec.subject);
    q.relation = kg.relations_.intern(rec.relation);
    q.object = kg.entities_.intern(rec.object);
    q.time = rec.time;
    kg.quads_.push_back(q);
  }
  kg.build_adjacency();
  return kg;
}

void TemporalKG::build_adjacency() {
  const std::size_t n = entities_.size();
  std::vector<std::size_t> counts(n + 1, 0);
  for (const Quadruple& q : quads_) {
    ++counts[static_cast<std::size_t>(q.subject) + 1];
    ++counts[static_cast<std::size_t>(q.object) + 1];
  }
  std::partial_sum(counts.begin(), counts.end(), counts.begin());
  adjacency_offsets_ = counts;
  adjacency_.assign(quads_.size() * 2, {});
  std::vector<std::size_t> cursor(counts.begin(), counts.end() - 1);
  // Quadruples are time-sorted, so appending in order keeps each list sorted.
  for (std::size_t i = 0; i < quads_.size(); ++i) {
    const Quadruple& q = quads_[i];
    adjacency_[cursor[q.subject]++] = {q.object, q.relation, q.time, Side::kSubject, i};
    adjacency_[cursor[q.object]++] = {q.subject, q.relation, q.time, Side::kObject, i};
  }
}

std::span<const AdjacentEvent> TemporalKG::events_of(EntityId entity) const {
  if (entity < 0 || static_cast<std::size_t>(entity) >= entities_.size()) {
    throw ArgumentError("unknown entity id " + std::to_string(entity));
  }
  const auto e = static_cast<std::size_t>(entity);
  return {adjacency_.data() + adjacency_offsets_[e], adjacency_offsets_[e + 1] - adjacency_offsets_[e]};
}

std::span<const AdjacentEvent> TemporalKG::events_between(EntityId entity, Timestamp after,
                                                          Timestamp upto) const {
  auto all = events_of(entity);
  if (upto <= after) return all.subspan(0, 0);
  auto before = [](Timestamp t, const AdjacentEvent& ev) { return t < ev.time; };
  auto lo = std::upper_bound(all.begin(), all.end(), after, before);
  auto hi = std::upper_bound(lo, all.end(), upto, before);
  return all.subspan(static_cast<std::size_t>(lo - all.begin()), static_cast<std::size_t>(hi - lo));
}

std::vector<std::size_t> TemporalKG::facts_of(EntityId entity) const {
  std::vector<std::size_t> out;
  for (const AdjacentEvent& ev : events_of(entity)) {
    if (out.empty() || out.back() != ev.fact) out.push_back(ev.fact);
  }
  return out;
}

Timestamp TemporalKG::min_time() const {
  if (quads_.empty()) throw ArgumentError("empty graph has no time span");
  return quads_.front().time;
}

Timestamp TemporalKG::max_time() const {
  if (quads_.empty()) throw ArgumentError("empty graph has no time span");
  return quads_.back().time;
}

std::vector<std::optional<Timestamp>> TemporalKG::first_appearance() const {
  std::vector<std::optional<Timestamp>> first(entities_.size());
  for (std::size_t e = 0; e < entities_.size(); ++e) {
    auto events = events_of(static_cast<EntityId>(e));
    if (!events.empty()) first[e] = events.front().time;
  }
  return first;
}

TemporalKG TemporalKG::filtered(const std::function<bool(std::size_t)>& keep) const {
  TemporalKG out;
  out.entities_ = entities_;
  out.relations_ = relations_;
  for (std::size_t i = 0; i < quads_.size(); ++i) {
    if (keep(i)) out.quads_.push_back(quads_[i]);
  }
  out.build_adjacency();
  return out;
}

TemporalKG TemporalKG::until(Timestamp last) const {
  return filtered([&](std::size_t i) { return quads_[i].time <= last; });
}

std::vector<NamedQuadruple> TemporalKG::records() const {
  std::vector<NamedQuadruple> out;
  out.reserve(quads_.size());
  for (const Quadruple& q : quads_) {
    out.push_back({entities_.name(q.subject), relations_.name(q.relation), entities_.name(q.object), q.time});
  }
  return out;
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return fields;
}

}  // namespace

TemporalKG ingest_tsv(std::istream& in) {
  std::vector<NamedQuadruple> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_tabs(line);
    if (fields.size() != 4) {
      throw ParseError(line_no, "expected 4 tab-separated fields, got " + std::to_string(fields.size()));
    }
    Timestamp t = 0;
    const std::string_view ts = fields[3];
    const auto [ptr, ec] = std::from_chars(ts.data(), ts.data() + ts.size(), t);
    if (ec != std::errc() || ptr != ts.data() + ts.size() || ts.empty()) {
      throw ParseError(line_no, "timestamp is not an integer: '" + std::string(ts) + "'");
    }
    if (t < 0) throw ParseError(line_no, "negative timestamp");
    for (std::size_t i = 0; i < 3; ++i) {
      if (fields[i].empty()) throw ParseError(line_no, "empty field " + std::to_string(i + 1));
    }
    records.push_back({std::string(fields[0]), std::string(fields[1]), std::string(fields[2]), t});
  }
  return TemporalKG::from_records(records);
}

TemporalKG ingest_tsv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ArgumentError("cannot open " + path);
  return ingest_tsv(in);
}

void write_tsv(const TemporalKG& kg, std::ostream& out) {
  for (const NamedQuadruple& r : kg.records()) {
    out << r.subject << '\t' << r.relation << '\t' << r.object << '\t' << r.time << '\n';
  }
}

const char* role_name(Role role) noexcept {
  switch (role) {
    case Role::kBackground: return "background";
    case Role::kMetaTrain: return "meta-train";
    case Role::kMetaValid: return "meta-validation";
    case Role::kMetaTest: return "meta-test";
  }
  return "unknown";
}

std::vector<EntityId> SplitAssignment::entities_with(Role role) const {
  std::vector<EntityId> out;
  for (std::size_t e = 0; e < roles.size(); ++e) {
    if (roles[e] == role) out.push_back(static_cast<EntityId>(e));
  }
  return out;
}

SplitAssignment chronological_split(const TemporalKG& kg, std::span<const double> ratios) {
  if (kg.empty()) throw ArgumentError("chronological_split: empty graph");
  if (ratios.size() != 4) throw ArgumentError("chronological_split: need 4 ratios");
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw ArgumentError("chronological_split: negative ratio");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("chronological_split: ratios must sum to 1");
  const Timestamp t_min = kg.min_time();
  const Timestamp t_max = kg.max_time();
  if (t_min == t_max) throw ArgumentError("chronological_split: degenerate time span");

  SplitAssignment split;
  const double span = static_cast<double>(t_max - t_min);
  double cumulative = 0.0;
  for (std::size_t i = 0; i < 3; ++i) {
    cumulative += ratios[i];
    const auto offset = static_cast<Timestamp>(std::floor(cumulative * span + 1e-9));
    split.boundaries[i] = std::min(t_max, t_min + offset);
  }

  const auto first = kg.first_appearance();
  split.roles.resize(kg.num_entities(), Role::kBackground);
  for (std::size_t e = 0; e < first.size(); ++e) {
    if (!first[e]) continue;
    const Timestamp t = *first[e];
    if (t <= split.boundaries[0]) split.roles[e] = Role::kBackground;
    else if (t <= split.boundaries[1]) split.roles[e] = Role::kMetaTrain;
    else if (t <= split.boundaries[2]) split.roles[e] = Role::kMetaValid;
    else split.roles[e] = Role::kMetaTest;
  }
  return split;
}

void write_split_manifest(const TemporalKG& kg, const SplitAssignment& split, std::ostream& out) {
  out << "# boundaries\t" << split.boundaries[0] << '\t' << split.boundaries[1] << '\t'
      << split.boundaries[2] << '\n';
  for (std::size_t e = 0; e < split.roles.size(); ++e) {
    out << kg.entities().name(static_cast<EntityId>(e)) << '\t' << role_name(split.roles[e]) << '\n';
  }
}

std::vector<EntityId> new_entities(const TemporalKG& kg, Timestamp t_lo, Timestamp t_hi) {
  if (t_lo >= t_hi) throw ArgumentError("new_entities: window must satisfy t_lo < t_hi");
  std::vector<EntityId> out;
  const auto first = kg.first_appearance();
  for (std::size_t e = 0; e < first.size(); ++e) {
    if (first[e] && *first[e] > t_lo && *first[e] <= t_hi) out.push_back(static_cast<EntityId>(e));
  }
  return out;
}

std::size_t FewShotTask::query_count() const {
  std::size_t n = 0;
  for (const auto& interval : query_intervals) n += interval.size();
  return n;
}

FewShotTask build_task(const TemporalKG& kg, EntityId entity, std::size_t shots, std::size_t intervals) {
  if (shots < 1) throw ArgumentError("build_task: K must be at least 1");
  if (intervals < 1) throw ArgumentError("build_task: M must be at least 1");
  const std::vector<std::size_t> facts = kg.facts_of(entity);
  if (facts.size() <= shots) {
    throw TaskError("entity " + kg.entities().name(entity) + " has " + std::to_string(facts.size()) +
                    " facts, need more than " + std::to_string(shots));
  }

  FewShotTask task;
  task.entity = entity;
  task.support_facts.assign(facts.begin(), facts.begin() + static_cast<std::ptrdiff_t>(shots));
  task.query_facts.assign(facts.begin() + static_cast<std::ptrdiff_t>(shots), facts.end());
  for (std::size_t f : task.support_facts) task.support.push_back(kg.quadruple(f));

  const Timestamp lo = kg.quadruple(task.query_facts.front()).time;
  const Timestamp hi = kg.quadruple(task.query_facts.back()).time;
  const auto m = static_cast<Timestamp>(intervals);
  task.interval_bounds.resize(intervals + 1);
  for (Timestamp i = 0; i <= m; ++i) {
    task.interval_bounds[static_cast<std::size_t>(i)] = lo + (hi - lo) * i / m;
  }
  task.query_intervals.resize(intervals);
  task.query_interval_facts.resize(intervals);
  std::size_t current = 0;
  for (std::size_t f : task.query_facts) {
    const Quadruple& q = kg.quadruple(f);
    while (current + 1 < intervals && q.time > task.interval_bounds[current + 1]) ++current;
    task.query_intervals[current].push_back(q);
    task.query_interval_facts[current].push_back(f);
  }
  return task;
}

}  // namespace tkgr
