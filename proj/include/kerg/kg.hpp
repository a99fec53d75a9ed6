#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "kerg/tensor.hpp"

namespace kerg {

using EntityId = int32_t;
using RelationId = int32_t;

struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& m) : std::runtime_error(m) {}
};

struct Triplet {
  EntityId source = 0;
  RelationId relation = 0;
  EntityId target = 0;
  auto operator<=>(const Triplet&) const = default;
};

// Raw ingest row before vocabulary compaction. `count` is the corpus
// occurrence tally used by the frequency filter (defaults to one mention).
struct TripletRow {
  std::string source;
  std::string relation;
  std::string target;
  int64_t count = 1;
};

// Directed knowledge graph over compact ids. Immutable once built; reads are
// thread-safe.
class KnowledgeGraph {
 public:
  std::vector<std::string> entity_names;    // id -> lowercase trimmed string
  std::vector<std::string> relation_names;  // id -> string
  std::vector<Triplet> triplets;            // deduplicated, sorted
  std::map<std::pair<EntityId, EntityId>, std::vector<RelationId>> adjacency;
  std::unordered_map<std::string, int64_t> entity_counts;  // surviving entities only

  int64_t num_entities() const { return static_cast<int64_t>(entity_names.size()); }
  int64_t num_relations() const { return static_cast<int64_t>(relation_names.size()); }
  int64_t num_triplets() const { return static_cast<int64_t>(triplets.size()); }

  EntityId entity_id(const std::string& name) const;     // -1 when absent
  RelationId relation_id(const std::string& name) const; // -1 when absent

  // Structural equality; occurrence tallies are provenance, not content.
  bool same_content(const KnowledgeGraph& other) const {
    return entity_names == other.entity_names && relation_names == other.relation_names &&
           triplets == other.triplets && adjacency == other.adjacency;
  }

 private:
  mutable std::unordered_map<std::string, EntityId> entity_index_;
  mutable std::unordered_map<std::string, RelationId> relation_index_;
  void build_name_index() const;
};

// Builds a graph from raw rows: normalizes strings, tallies entity mentions
// weighted by row counts, drops triplets whose source or target falls below
// min_entity_count, dedups, and assigns dense ids in lexicographic order.
KnowledgeGraph ingest(const std::vector<TripletRow>& rows, int64_t min_entity_count);

// All relation ids on the directed edge (e_i, e_j); empty when unconnected.
const std::vector<RelationId>& relations_between(const KnowledgeGraph& g, EntityId e_i,
                                                 EntityId e_j);

// Every triplet whose source or target string is in terms, in stored order.
std::vector<Triplet> lookup_by_entity(const KnowledgeGraph& g, const std::set<std::string>& terms);

// Tab-separated source/relation/target with an optional fourth count column.
std::vector<TripletRow> read_triplet_tsv(const std::string& path);
// JSONL with fields {"source","relation","target"} and optional "count".
std::vector<TripletRow> read_triplet_jsonl(const std::string& path);
void write_triplet_tsv(const KnowledgeGraph& g, const std::string& path);

}  // namespace kerg
