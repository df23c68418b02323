#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace tkgr {

using EntityId = std::int32_t;
using RelationId = std::int32_t;
using Timestamp = std::int64_t;

struct Quadruple {
  EntityId subject = 0;
  RelationId relation = 0;
  EntityId object = 0;
  Timestamp time = 0;

  friend bool operator==(const Quadruple&, const Quadruple&) = default;
};

// Which endpoint of the quadruple the owning entity occupies.
enum class Side : std::uint8_t { kSubject, kObject };

struct AdjacentEvent {
  EntityId counterpart = 0;
  RelationId relation = 0;
  Timestamp time = 0;
  Side side = Side::kSubject;
  std::size_t fact = 0;  // index into TemporalKG::quadruples()

  friend bool operator==(const AdjacentEvent&, const AdjacentEvent&) = default;
};

// Dense ids <-> names, ids handed out in insertion order.
class Vocabulary {
 public:
  std::int32_t intern(std::string_view name);
  std::optional<std::int32_t> find(std::string_view name) const;
  const std::string& name(std::int32_t id) const { return names_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const noexcept { return names_.size(); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

// Read access to time-windowed adjacency. The sampler only ever reads the
// graph through this interface, so tests can log exactly what it touches.
class EventSource {
 public:
  virtual ~EventSource() = default;
  virtual std::size_t num_entities() const = 0;
  // Events of `entity` with after < time <= upto, chronological order.
  virtual std::span<const AdjacentEvent> events_between(EntityId entity, Timestamp after,
                                                        Timestamp upto) const = 0;
};

// A quadruple record with names, as read from or written to TSV.
struct NamedQuadruple {
  std::string subject;
  std::string relation;
  std::string object;
  Timestamp time = 0;
};

// Immutable temporal knowledge graph. Quadruples are stored sorted by time
// with ties kept in input order; ids are assigned by first appearance in
// that order, so serializing and re-reading reproduces the same ids.
class TemporalKG final : public EventSource {
 public:
  TemporalKG() = default;

  static TemporalKG from_records(std::span<const NamedQuadruple> records);

  const Vocabulary& entities() const noexcept { return entities_; }
  const Vocabulary& relations() const noexcept { return relations_; }
  std::span<const Quadruple> quadruples() const noexcept { return quads_; }
  const Quadruple& quadruple(std::size_t i) const { return quads_.at(i); }

  std::size_t num_entities() const override { return entities_.size(); }
  std::size_t num_relations() const noexcept { return relations_.size(); }
  std::size_t num_quadruples() const noexcept { return quads_.size(); }
  bool empty() const noexcept { return quads_.empty(); }

  // Every adjacency entry of an entity, chronological.
  std::span<const AdjacentEvent> events_of(EntityId entity) const;
  std::span<const AdjacentEvent> events_between(EntityId entity, Timestamp after,
                                                Timestamp upto) const override;

  // Indices of facts mentioning the entity, chronological, each fact once.
  std::vector<std::size_t> facts_of(EntityId entity) const;

  Timestamp min_time() const;
  Timestamp max_time() const;
  // Earliest event time per entity; nullopt for an entity with no events.
  std::vector<std::optional<Timestamp>> first_appearance() const;

  // Copy keeping the vocabularies but only facts accepted by `keep`
  // (called with the fact index in this graph).
  TemporalKG filtered(const std::function<bool(std::size_t)>& keep) const;
  TemporalKG until(Timestamp last) const;

  std::vector<NamedQuadruple> records() const;

 private:
  void build_adjacency();

  Vocabulary entities_;
  Vocabulary relations_;
  std::vector<Quadruple> quads_;
  std::vector<std::size_t> adjacency_offsets_;
  std::vector<AdjacentEvent> adjacency_;
};

// Reads `subject<TAB>relation<TAB>object<TAB>timestamp` lines. Blank lines
// and lines starting with '#' are skipped. Throws ParseError with the line
// number on a malformed record.
TemporalKG ingest_tsv(std::istream& in);
TemporalKG ingest_tsv_file(const std::string& path);
void write_tsv(const TemporalKG& kg, std::ostream& out);

enum class Role : std::uint8_t { kBackground, kMetaTrain, kMetaValid, kMetaTest };
const char* role_name(Role role) noexcept;

struct SplitAssignment {
  // Periods are [t_min, t1], (t1, t2], (t2, t3], (t3, t_max].
  std::array<Timestamp, 3> boundaries{};
  std::vector<Role> roles;  // per entity

  std::vector<EntityId> entities_with(Role role) const;
};

SplitAssignment chronological_split(const TemporalKG& kg, std::span<const double> ratios);
void write_split_manifest(const TemporalKG& kg, const SplitAssignment& split, std::ostream& out);

// Entities whose earliest event lies in (t_lo, t_hi].
std::vector<EntityId> new_entities(const TemporalKG& kg, Timestamp t_lo, Timestamp t_hi);

struct FewShotTask {
  EntityId entity = 0;
  std::vector<Quadruple> support;
  std::vector<std::vector<Quadruple>> query_intervals;
  // M + 1 bounds; interval m covers (bounds[m-1], bounds[m]], the first one
  // closed on the left.
  std::vector<Timestamp> interval_bounds;
  std::vector<std::size_t> support_facts;  // fact indices in the source graph
  std::vector<std::size_t> query_facts;
  std::vector<std::vector<std::size_t>> query_interval_facts;  // aligned with query_intervals

  std::size_t query_count() const;
};

// Support = first K facts of the entity, the rest split into M intervals of
// equal time width. Throws TaskError if the entity has <= K facts.
FewShotTask build_task(const TemporalKG& kg, EntityId entity, std::size_t shots,
                       std::size_t intervals);

}  // namespace tkgr
