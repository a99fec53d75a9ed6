#include "kerg/synth.hpp"

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "kerg/kg.hpp"
#include "kerg/metrics.hpp"

using namespace kerg;
namespace fs = std::filesystem;

namespace {

std::string tmp_path(const std::string& name) {
  return (fs::temp_directory_path() / name).string();
}

// Minimal two-finding world: one abnormality with a single rule and a single
// template, so every abnormal report comes out identical.
WorldSpec tiny_world() {
  WorldSpec spec;
  FindingSpec blob;
  blob.name = "blob";
  blob.normal_templates = {"no {f}"};
  blob.abnormal_templates = {"there is {f} in the {located_at} zone"};
  spec.findings.push_back(blob);
  FindingSpec healthy;
  healthy.name = "all clear";
  healthy.normal_templates = {"{f}"};
  spec.findings.push_back(healthy);
  spec.kg_rules = {{"blob", "located_at", "apex"}};
  spec.cooccurrence = {{0.0}};
  spec.healthy_rate = 0.0;
  spec.max_active = 1;
  spec.feature_dim = 8;
  spec.grid_rows = 2;
  return spec;
}

}  // namespace

TEST_CASE("default world passes its own validation") {
  const auto spec = WorldSpec::default_world();
  CHECK_NOTHROW(spec.validate());
  CHECK(spec.n_findings() == 14);
  CHECK(spec.findings[spec.healthy_index()].name == "no finding");
  CHECK(spec.kg_rules.size() == 13 * 24);
}

TEST_CASE("world validation rejects broken specs") {
  auto base = tiny_world();
  CHECK_NOTHROW(base.validate());

  auto no_rule = base;
  no_rule.kg_rules.clear();
  CHECK_THROWS_AS(no_rule.validate(), ContractError);

  auto no_slot = base;
  no_slot.findings[0].abnormal_templates = {"there is {f}"};
  CHECK_THROWS_AS(no_slot.validate(), ContractError);

  auto ungrounded = base;
  ungrounded.findings[0].abnormal_templates = {"{modify} {f} is seen"};
  CHECK_THROWS_AS(ungrounded.validate(), ContractError);

  auto collide = base;
  collide.kg_rules[0].target = "zone";  // template word
  CHECK_THROWS_AS(collide.validate(), ContractError);

  auto multiword = base;
  multiword.kg_rules[0].target = "left apex";
  CHECK_THROWS_AS(multiword.validate(), ContractError);

  auto healthy_source = base;
  healthy_source.kg_rules.push_back({"all clear", "located_at", "apex"});
  CHECK_THROWS_AS(healthy_source.validate(), ContractError);

  auto bad_rate = base;
  bad_rate.healthy_rate = 1.0;
  CHECK_THROWS_AS(bad_rate.validate(), ContractError);

  auto ragged = base;
  ragged.cooccurrence = {{0.0, 0.0}};
  CHECK_THROWS_AS(ragged.validate(), ContractError);

  auto dup = base;
  dup.findings.push_back(dup.findings[0]);
  CHECK_THROWS_AS(dup.validate(), ContractError);
}

TEST_CASE("generation is deterministic in the seed") {
  const auto spec = WorldSpec::default_world(16, 11);
  std::vector<std::vector<TensorPtr>> ga, gb;
  const auto a = generate(spec, 60, &ga);
  const auto b = generate(spec, 60, &gb);
  REQUIRE(a.records.size() == 60);
  REQUIRE(b.records.size() == 60);
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].record.id == b.records[i].record.id);
    CHECK(a.records[i].report_text == b.records[i].report_text);
    CHECK(a.records[i].record.report == b.records[i].record.report);
    CHECK(a.records[i].record.labels == b.records[i].record.labels);
    CHECK(a.records[i].findings == b.records[i].findings);
    REQUIRE(ga[i].size() == gb[i].size());
    for (size_t v = 0; v < ga[i].size(); ++v) CHECK(ga[i][v]->data == gb[i][v]->data);
  }
  CHECK(a.train_ids == b.train_ids);
  CHECK(a.val_ids == b.val_ids);
  CHECK(a.test_ids == b.test_ids);

  auto other = spec;
  other.seed = 12;
  const auto c = generate(other, 60);
  bool any_diff = false;
  for (size_t i = 0; i < c.records.size(); ++i)
    any_diff |= c.records[i].report_text != a.records[i].report_text;
  CHECK(any_diff);
}

TEST_CASE("single-finding world produces one fixed report") {
  const auto ds = generate(tiny_world(), 50);
  for (const auto& sr : ds.records) {
    CHECK(sr.report_text == "there is blob in the apex zone");
    CHECK(sr.findings == std::vector<int64_t>{0});
    CHECK(sr.record.labels == std::vector<double>{1.0, 0.0});
  }
}

TEST_CASE("records respect world structure") {
  const auto spec = WorldSpec::default_world(16, 3);
  const auto ds = generate(spec, 500);
  REQUIRE(ds.records.size() == 500);

  int64_t healthy_count = 0, two_views = 0;
  for (const auto& sr : ds.records) {
    REQUIRE(!sr.findings.empty());
    CHECK(std::is_sorted(sr.findings.begin(), sr.findings.end()));
    const bool healthy = sr.findings[0] == spec.healthy_index();
    if (healthy) {
      ++healthy_count;
      CHECK(sr.findings.size() == 1);
    } else {
      CHECK(static_cast<int64_t>(sr.findings.size()) <= spec.max_active);
      for (int64_t f : sr.findings) CHECK(f < spec.healthy_index());
    }
    double sum = 0.0;
    for (double v : sr.record.labels) sum += v;
    CHECK(sum == doctest::Approx(1.0));
    if (sr.record.views.size() == 2) ++two_views;

    // stored ids decode back to the exact report text
    const auto toks = tokenize_report(sr.report_text);
    REQUIRE(sr.record.report.size() == toks.size());
    for (size_t t = 0; t < toks.size(); ++t)
      CHECK(ds.vocab[static_cast<size_t>(sr.record.report[t])] == toks[t]);
  }
  // healthy draw is Bernoulli(0.2); 500 samples stay well inside [0.1, 0.3]
  CHECK(healthy_count > 50);
  CHECK(healthy_count < 150);
  CHECK(two_views > 0);
  CHECK(two_views < 500);
}

TEST_CASE("attribute words appear only when a graph rule licenses them") {
  const auto ds = generate(WorldSpec::default_world(16, 5), 500);
  CHECK(audit_attributes(ds));
}

TEST_CASE("vocabulary starts with control tokens and covers every report") {
  const auto ds = generate(WorldSpec::default_world(16, 9), 80);
  REQUIRE(ds.vocab.size() > 3);
  CHECK(ds.vocab[0] == "[BOS]");
  CHECK(ds.vocab[1] == "[EOS]");
  CHECK(ds.vocab[2] == "[PAD]");
  const std::set<std::string> unique(ds.vocab.begin(), ds.vocab.end());
  CHECK(unique.size() == ds.vocab.size());
  CHECK(std::is_sorted(ds.vocab.begin() + 3, ds.vocab.end()));
  CHECK(unique.count("."));
  for (const auto& r : ds.spec.kg_rules) CHECK(unique.count(r.target));
}

TEST_CASE("splits are a disjoint 7:1:2 partition") {
  const auto ds = generate(WorldSpec::default_world(16, 4), 100);
  CHECK(ds.train_ids.size() == 70);
  CHECK(ds.val_ids.size() == 10);
  CHECK(ds.test_ids.size() == 20);
  std::set<std::string> seen;
  for (const auto* ids : {&ds.train_ids, &ds.val_ids, &ds.test_ids})
    for (const auto& id : *ids) CHECK(seen.insert(id).second);
  CHECK(seen.size() == 100);
}

TEST_CASE("exported graph ingests back to the same content") {
  const auto spec = WorldSpec::default_world();
  const std::string path = tmp_path("kerg_synth_kg.tsv");
  export_kg(spec, path);

  const auto rows = read_triplet_tsv(path);
  CHECK(rows.size() == spec.kg_rules.size());
  const auto round = ingest(rows, 1);
  const auto direct = ingest(spec.kg_rules, 1);
  CHECK(round.same_content(direct));
  CHECK(round.num_relations() == 3);
  // 13 findings plus every attribute in play
  std::set<std::string> ents;
  for (const auto& r : spec.kg_rules) {
    ents.insert(r.source);
    ents.insert(r.target);
  }
  CHECK(round.num_entities() == static_cast<int64_t>(ents.size()));
  fs::remove(path);
}

TEST_CASE("fact-aware bigram model beats the plain one on held-out reports") {
  const auto ds = generate(WorldSpec::default_world(16, 6), 300);
  const auto audit = bigram_fact_audit(ds);
  CHECK(audit.with_facts > 1.0);
  CHECK(audit.without_facts > 1.0);
  CHECK(audit.with_facts < audit.without_facts);
}

TEST_CASE("generation rejects tiny corpora") {
  CHECK_THROWS_AS(generate(WorldSpec::default_world(), 49), ContractError);
}

TEST_CASE("write and load round-trip a dataset directory") {
  const std::string dir = tmp_path("kerg_synth_ds");
  fs::remove_all(dir);
  const auto spec = WorldSpec::default_world(16, 21);
  write_dataset(spec, 60, dir);

  const auto mem = generate(spec, 60);
  const auto ds = load_dataset(dir);
  CHECK(ds.spec.seed == spec.seed);
  CHECK(ds.spec.kg_rules.size() == spec.kg_rules.size());
  REQUIRE(ds.spec.n_findings() == spec.n_findings());
  for (int64_t f = 0; f < spec.n_findings(); ++f)
    CHECK(ds.spec.findings[f].name == spec.findings[f].name);
  CHECK_NOTHROW(ds.spec.validate());
  CHECK(ds.vocab == mem.vocab);
  CHECK(ds.train_ids == mem.train_ids);
  CHECK(ds.val_ids == mem.val_ids);
  CHECK(ds.test_ids == mem.test_ids);
  REQUIRE(ds.records.size() == mem.records.size());
  for (size_t i = 0; i < ds.records.size(); ++i) {
    CHECK(ds.records[i].record.id == mem.records[i].record.id);
    CHECK(ds.records[i].record.report == mem.records[i].record.report);
    CHECK(ds.records[i].record.labels == mem.records[i].record.labels);
    CHECK(ds.records[i].findings == mem.records[i].findings);
    CHECK(ds.records[i].report_text == mem.records[i].report_text);
  }

  // view paths resolve and hold grid-shaped features
  for (const auto& view : ds.records[0].record.views) {
    const auto grid = read_feature_file(view);
    CHECK(grid->rows() == spec.grid_rows);
    CHECK(grid->cols() == spec.feature_dim);
  }
  CHECK(fs::exists(fs::path(dir) / "kg.tsv"));

  fs::remove_all(dir);
}

TEST_CASE("load_dataset reports missing directories") {
  CHECK_THROWS_AS(load_dataset(tmp_path("kerg_synth_nowhere")), ContractError);
}
