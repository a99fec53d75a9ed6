#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "kerg/kg.hpp"

using namespace kerg;

namespace {

std::vector<TripletRow> demo_rows() {
  return {
      {"Pneumothorax", "suggestive_of", "bleeding", 100},
      {"effusion", "located_at", "bilateral", 100},
      {"pneumothorax", "located_at", "left", 100},
  };
}

}  // namespace

TEST_CASE("ingest keeps rows above the count threshold and drops the rest") {
  auto g = ingest(demo_rows(), 10);
  CHECK(g.num_triplets() == 3);
  CHECK(g.num_entities() == 5);
  CHECK(g.num_relations() == 2);

  // rare entity: all its triplets vanish
  auto rows = demo_rows();
  rows.push_back({"fracture", "located_at", "rib", 3});
  auto g2 = ingest(rows, 10);
  CHECK(g2.num_triplets() == 3);
  CHECK(g2.entity_id("fracture") == -1);

  CHECK_THROWS_AS(ingest({{"a", "r", "b", 1}}, 10), ContractError);
  CHECK_THROWS_AS(ingest({{"", "r", "b", 5}}, 1), ParseError);
}

TEST_CASE("ingest normalizes case/whitespace and assigns lexicographic ids") {
  auto g = ingest(demo_rows(), 1);
  // bilateral < bleeding < effusion < left < pneumothorax
  CHECK(g.entity_names.front() == "bilateral");
  CHECK(g.entity_names.back() == "pneumothorax");
  CHECK(g.entity_id("pneumothorax") != -1);  // "Pneumothorax" was lowercased
  for (size_t i = 1; i < g.entity_names.size(); ++i)
    CHECK(g.entity_names[i - 1] < g.entity_names[i]);
}

TEST_CASE("ingest deduplicates triplets but keeps mention tallies") {
  std::vector<TripletRow> rows = {{"a", "r", "b", 1}, {"a", "r", "b", 1}, {"a", "r", "b", 1}};
  auto g = ingest(rows, 1);
  CHECK(g.num_triplets() == 1);
  CHECK(g.entity_counts.at("a") == 3);
}

TEST_CASE("relations_between is directed and supports multi-relation edges") {
  std::vector<TripletRow> rows = {{"a", "r1", "b", 5}, {"a", "r2", "b", 5}};
  auto g = ingest(rows, 1);
  const auto a = g.entity_id("a"), b = g.entity_id("b");
  auto fwd = relations_between(g, a, b);
  REQUIRE(fwd.size() == 2);
  CHECK(g.relation_names[fwd[0]] == "r1");
  CHECK(g.relation_names[fwd[1]] == "r2");
  CHECK(relations_between(g, b, a).empty());
  CHECK_THROWS_AS(relations_between(g, a, 99), ContractError);
}

TEST_CASE("lookup_by_entity matches source or target strings") {
  auto g = ingest(demo_rows(), 1);
  auto hits = lookup_by_entity(g, {"pneumothorax", "effusion"});
  CHECK(hits.size() == 3);  // all three triplets touch one of the two terms

  auto only_bleeding = lookup_by_entity(g, {"bleeding"});
  REQUIRE(only_bleeding.size() == 1);
  CHECK(g.entity_names[only_bleeding[0].target] == "bleeding");

  CHECK(lookup_by_entity(g, {}).empty());
  std::set<std::string> all(g.entity_names.begin(), g.entity_names.end());
  CHECK(lookup_by_entity(g, all).size() == static_cast<size_t>(g.num_triplets()));
}

TEST_CASE("lookup over a union of terms equals the union of lookups") {
  auto g = ingest(demo_rows(), 1);
  auto u = lookup_by_entity(g, {"pneumothorax", "bilateral"});
  auto a = lookup_by_entity(g, {"pneumothorax"});
  auto b = lookup_by_entity(g, {"bilateral"});
  std::set<Triplet> merged(a.begin(), a.end());
  merged.insert(b.begin(), b.end());
  CHECK(std::set<Triplet>(u.begin(), u.end()) == merged);
}

TEST_CASE("adjacency is exactly the inverse index of the triplet list") {
  auto g = ingest(demo_rows(), 1);
  std::map<std::pair<EntityId, EntityId>, std::vector<RelationId>> rebuilt;
  for (const auto& t : g.triplets) rebuilt[{t.source, t.target}].push_back(t.relation);
  CHECK(rebuilt == g.adjacency);
}

TEST_CASE("tsv round-trip reproduces the graph") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "kerg_kg_test.tsv").string();
  auto g = ingest(demo_rows(), 10);
  write_triplet_tsv(g, path);
  auto g2 = ingest(read_triplet_tsv(path), 1);
  CHECK(g.same_content(g2));
  fs::remove(path);
}

TEST_CASE("tsv parser reports malformed lines with their line number") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "kerg_kg_bad.tsv").string();
  {
    std::ofstream os(path);
    os << "a\trel\tb\n";
    os << "only_two\tfields\n";
  }
  try {
    read_triplet_tsv(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
  fs::remove(path);
}

TEST_CASE("jsonl triplets load with optional counts") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "kerg_kg_test.jsonl").string();
  {
    std::ofstream os(path);
    os << R"({"source":"a","relation":"r","target":"b","count":12})" << "\n";
    os << R"({"source":"b","relation":"r","target":"c"})" << "\n";
  }
  auto rows = read_triplet_jsonl(path);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].count == 12);
  CHECK(rows[1].count == 1);
  {
    std::ofstream os(path);
    os << R"({"source":"a"})" << "\n";
  }
  CHECK_THROWS_AS(read_triplet_jsonl(path), ParseError);
  fs::remove(path);
}
