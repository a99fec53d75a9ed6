#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kerg/kg.hpp"
#include "kerg/repository.hpp"
#include "kerg/rng.hpp"

namespace kerg {

// Abnormal sentence patterns contain {f} for the finding phrase plus one slot
// per graph relation (e.g. {located_at}); each slot is filled with an
// attribute licensed for that finding through the named relation.
struct FindingSpec {
  std::string name;                            // lowercase label phrase
  std::vector<std::string> normal_templates;   // contain {f}
  std::vector<std::string> abnormal_templates; // contain {f} and relation slots
};

// Declarative description of the synthetic world. Everything downstream
// (reports, labels, features, the graph) derives from this plus a seed.
struct WorldSpec {
  std::vector<FindingSpec> findings;              // last entry is the healthy label
  std::vector<TripletRow> kg_rules;               // (finding, relation, attribute)
  std::vector<std::vector<double>> cooccurrence;  // abnormal x abnormal activation odds
  double healthy_rate = 0.2;
  int64_t max_active = 3;
  int64_t feature_dim = 64;
  int64_t grid_rows = 4;  // k rows per feature grid
  double feature_noise = 0.3;
  uint64_t seed = 7;

  int64_t n_findings() const { return static_cast<int64_t>(findings.size()); }
  int64_t healthy_index() const { return n_findings() - 1; }
  void validate() const;

  static WorldSpec default_world(int64_t feature_dim = 64, uint64_t seed = 7);
};

struct SynthRecord {
  Record record;                  // id, view paths, report token ids (body), labels
  std::vector<int64_t> findings;  // gold active finding indices
  std::string report_text;
};

struct SynthDataset {
  WorldSpec spec;
  std::vector<SynthRecord> records;
  std::vector<std::string> vocab;  // token id -> string; [BOS] [EOS] [PAD] first
  std::vector<std::string> train_ids, val_ids, test_ids;
};

// Samples n_records records and splits them 7:1:2, deterministic in
// spec.seed. Feature grids (one tensor per view per record) land in
// *feature_grids when given; otherwise they are regenerated at write time.
SynthDataset generate(const WorldSpec& spec, int64_t n_records,
                      std::vector<std::vector<TensorPtr>>* feature_grids = nullptr);

// Emits kg_rules in the triplet TSV format; ingest() reproduces the rule set.
void export_kg(const WorldSpec& spec, const std::string& path);

// Writes records.jsonl, features/*.bin, kg.tsv, splits.json, vocab.json,
// world.json under dir.
void write_dataset(const WorldSpec& spec, int64_t n_records, const std::string& dir);

SynthDataset load_dataset(const std::string& dir);

// True when every abnormal report contains at least one attribute token
// licensed by the record's gold findings through kg_rules.
bool audit_attributes(const SynthDataset& ds);

// Add-one bigram perplexity of test reports, with and without fact access.
// The fact-aware model zeroes attribute words the record's gold rules do not
// license and renormalizes, so it can only match or improve.
struct PerplexityAudit {
  double with_facts = 0.0;
  double without_facts = 0.0;
};
PerplexityAudit bigram_fact_audit(const SynthDataset& ds);

}  // namespace kerg
