#include "kerg/kg.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>

namespace kerg {

namespace {

std::string normalize(const std::string& raw) {
  size_t b = 0, e = raw.size();
  while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) --e;
  std::string out = raw.substr(b, e - b);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

void KnowledgeGraph::build_name_index() const {
  if (entity_index_.size() == entity_names.size() &&
      relation_index_.size() == relation_names.size())
    return;
  entity_index_.clear();
  relation_index_.clear();
  for (size_t i = 0; i < entity_names.size(); ++i)
    entity_index_[entity_names[i]] = static_cast<EntityId>(i);
  for (size_t i = 0; i < relation_names.size(); ++i)
    relation_index_[relation_names[i]] = static_cast<RelationId>(i);
}

EntityId KnowledgeGraph::entity_id(const std::string& name) const {
  build_name_index();
  auto it = entity_index_.find(name);
  return it == entity_index_.end() ? -1 : it->second;
}

RelationId KnowledgeGraph::relation_id(const std::string& name) const {
  build_name_index();
  auto it = relation_index_.find(name);
  return it == relation_index_.end() ? -1 : it->second;
}

KnowledgeGraph ingest(const std::vector<TripletRow>& rows, int64_t min_entity_count) {
  // Tally mentions first so the frequency filter sees the whole corpus.
  std::unordered_map<std::string, int64_t> counts;
  std::vector<TripletRow> norm;
  norm.reserve(rows.size());
  for (const auto& r : rows) {
    TripletRow n{normalize(r.source), normalize(r.relation), normalize(r.target), r.count};
    if (n.source.empty() || n.relation.empty() || n.target.empty())
      throw ParseError("ingest: blank field in triplet row");
    if (n.count <= 0) throw ParseError("ingest: nonpositive count for '" + n.source + "'");
    counts[n.source] += n.count;
    counts[n.target] += n.count;
    norm.push_back(std::move(n));
  }

  std::vector<const TripletRow*> kept;
  for (const auto& n : norm)
    if (counts[n.source] >= min_entity_count && counts[n.target] >= min_entity_count)
      kept.push_back(&n);
  if (kept.empty())
    throw ContractError("ingest: no triplets survive min_entity_count=" +
                        std::to_string(min_entity_count));

  std::set<std::string> entity_set, relation_set;
  for (const auto* n : kept) {
    entity_set.insert(n->source);
    entity_set.insert(n->target);
    relation_set.insert(n->relation);
  }

  KnowledgeGraph g;
  g.entity_names.assign(entity_set.begin(), entity_set.end());
  g.relation_names.assign(relation_set.begin(), relation_set.end());
  for (const auto& name : g.entity_names) g.entity_counts[name] = counts[name];

  std::set<Triplet> dedup;
  for (const auto* n : kept)
    dedup.insert(Triplet{g.entity_id(n->source), g.relation_id(n->relation),
                         g.entity_id(n->target)});
  g.triplets.assign(dedup.begin(), dedup.end());
  for (const auto& t : g.triplets) g.adjacency[{t.source, t.target}].push_back(t.relation);
  return g;
}

const std::vector<RelationId>& relations_between(const KnowledgeGraph& g, EntityId e_i,
                                                 EntityId e_j) {
  if (e_i < 0 || e_i >= g.num_entities() || e_j < 0 || e_j >= g.num_entities())
    throw ContractError("relations_between: entity id out of range");
  static const std::vector<RelationId> kEmpty;
  auto it = g.adjacency.find({e_i, e_j});
  return it == g.adjacency.end() ? kEmpty : it->second;
}

std::vector<Triplet> lookup_by_entity(const KnowledgeGraph& g, const std::set<std::string>& terms) {
  std::vector<Triplet> out;
  for (const auto& t : g.triplets)
    if (terms.count(g.entity_names[t.source]) || terms.count(g.entity_names[t.target]))
      out.push_back(t);
  return out;
}

std::vector<TripletRow> read_triplet_tsv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ContractError("read_triplet_tsv: cannot open " + path);
  std::vector<TripletRow> rows;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    size_t start = 0;
    while (true) {
      size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3 && fields.size() != 4)
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 3 or 4 tab-separated " +
                       "fields, got " + std::to_string(fields.size()));
    TripletRow r{fields[0], fields[1], fields[2], 1};
    if (fields.size() == 4) {
      try {
        r.count = std::stoll(fields[3]);
      } catch (const std::exception&) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": bad count '" + fields[3] + "'");
      }
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<TripletRow> read_triplet_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ContractError("read_triplet_jsonl: cannot open " + path);
  std::vector<TripletRow> rows;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("source") || !j.contains("relation") ||
        !j.contains("target"))
      throw ParseError(path + ":" + std::to_string(lineno) + ": malformed triplet object");
    TripletRow r;
    r.source = j.at("source").get<std::string>();
    r.relation = j.at("relation").get<std::string>();
    r.target = j.at("target").get<std::string>();
    r.count = j.value("count", int64_t{1});
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_triplet_tsv(const KnowledgeGraph& g, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ContractError("write_triplet_tsv: cannot open " + path);
  for (const auto& t : g.triplets)
    os << g.entity_names[t.source] << '\t' << g.relation_names[t.relation] << '\t'
       << g.entity_names[t.target] << '\n';
}

}  // namespace kerg
