#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <unordered_map>
#include <vector>

#include "kerg/attention.hpp"
#include "kerg/generator.hpp"
#include "kerg/kg.hpp"
#include "kerg/kg_embed.hpp"
#include "kerg/metrics.hpp"
#include "kerg/repository.hpp"
#include "kerg/specific.hpp"
#include "kerg/synth.hpp"

namespace kerg {

// Exit-code taxonomy for the command-line tool: ConfigError -> 2,
// DataError/ParseError -> 3, NumericError -> 4.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};
struct DataError : std::runtime_error {
  explicit DataError(const std::string& m) : std::runtime_error(m) {}
};

// Every knob of a run, merged defaults <- config file <- flags.
struct RunConfig {
  // model
  int64_t d = 512;
  int64_t layers = 3;
  int64_t heads = 8;
  int64_t ffn_hidden = 2048;
  int64_t max_len = 60;
  int64_t n_c = 14;
  int64_t fact_len = 128;
  int64_t fact_layers = 1;
  // kg
  std::string kg_model = "rotate";
  int64_t kg_dim = 400;
  int64_t kg_epochs = 200;
  double kg_lr = 1e-2;
  double kg_margin = 6.0;
  int64_t kg_negatives = 4;
  int64_t kg_batch = 128;
  int64_t min_count = 1;
  // retrieval
  int64_t topk = 10;
  // train
  double lr = 1e-4;
  double weight_decay = 5e-5;
  double encoder_lr = 5e-5;
  double lambda_cls = 0.5;
  int64_t epochs = 50;
  int64_t batch_size = 16;
  uint64_t seed = 0;
  // generation / evaluation
  int64_t beam = 1;
  std::string labeler_path = "config/labels.toml";
  std::string ablation = "full";

  void validate() const;  // ConfigError on out-of-range values
  TrainConfig train_config() const;
  KgEmbedConfig kg_config() const;
  std::string to_json() const;  // stable field order
  std::string hash() const;     // FNV-1a over to_json(), 16 hex chars
};

// Flat INI-style file: [section] headers group keys per module, `key = value`
// lines, # comments. Unknown keys are errors. Flags override file values.
void apply_config_file(RunConfig& cfg, const std::string& path);
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Inverse of RunConfig::to_json; also accepts a manifest's "config" object.
RunConfig config_from_json(const std::string& text);

// base | wo_kemha | wo_gke | wo_ske | full
AblationFlags flags_for(const std::string& name);
const std::vector<std::string>& ablation_names();

// A dataset directory loaded for running: records, features, retrieval index
// over the train split (gold label distributions), pre-tokenized reports, and
// the ingested knowledge graph.
struct RunData {
  SynthDataset ds;
  KnowledgeGraph graph;
  std::unordered_map<std::string, int64_t> by_id;
  std::vector<TensorPtr> features;  // per record: views encoded and pooled, [k x f]
  std::vector<TokenSeq> words;      // per record: tokenized report text
  RepositoryIndex index;

  const SynthRecord& rec(const std::string& id) const;
  const TensorPtr& feats(const std::string& id) const;
  int64_t feature_dim() const;
};

RunData load_run_data(const std::string& dir, int64_t min_count = 1);
// In-memory path for tests: generates the corpus and keeps features local.
RunData make_run_data(const WorldSpec& spec, int64_t n_records, int64_t min_count = 1);

// The full trainable bundle plus its frozen knowledge inputs.
struct Pipeline {
  RunConfig cfg;
  AblationFlags flags;
  // trainable
  TensorPtr w_v, b_v;  // visual projection, feature_dim -> d
  LabelHead head;
  TensorPtr w_e;         // entity projection, kg_dim -> d (general path)
  KemhaParams gke_att;   // relation-biased attention over projected entities
  FactEncoder fact_enc;  // specific path
  KemhaParams ske_att;
  GeneratorModel gen;
  // frozen
  EmbeddingTables tables;
  RelationBank bank;
  Gazetteer gaz;
  FactVocab fact_vocab;

  std::vector<NamedParam> named_params() const;  // flag-conditional
  int64_t param_count() const;
  Adam make_optimizer() const;  // decoder group at lr, visual/classifier at encoder_lr
};

// tables may be null when the configuration has no general path.
Pipeline init_pipeline(const RunConfig& cfg, int64_t vocab_size, int64_t feature_dim,
                       const KnowledgeGraph& graph, const EmbeddingTables* tables);

// Per-record forward pieces, rebuilt every step so the autodiff graph sees
// current parameter values.
struct RecordForward {
  TensorPtr visual;      // projected grid [k x d]
  TensorPtr cls_logits;  // [1 x n_c]
  TensorPtr memory;
};
RecordForward forward_record(const Pipeline& pipe, const TensorPtr& raw_feats,
                             const FactSequence& facts, const TensorPtr& entity_proj);

// Mines the fact sequence for one query label distribution.
FactSequence mine_for(const Pipeline& pipe, const RunData& data, const std::vector<double>& y,
                      const std::string& exclude_id);

struct EpochStats {
  int64_t epoch = 0;
  double train_nll = 0.0;
  double train_cls = 0.0;
  double val_nll = 0.0;
};
struct TrainHistory {
  std::vector<EpochStats> epochs;
};

// Teacher-forced training on the train split. Retrieval during training uses
// the gold label distribution (the predicted one converges to it through the
// auxiliary loss and is used at inference).
TrainHistory train_pipeline(Pipeline& pipe, const RunData& data, std::ostream* log = nullptr);

struct Prediction {
  std::string id;
  std::vector<int64_t> body;
  std::string text;
};

std::vector<Prediction> generate_split(const Pipeline& pipe, const RunData& data,
                                       const std::vector<std::string>& ids);

MetricReport evaluate_predictions(const std::vector<Prediction>& preds, const RunData& data,
                                  const KeywordLabeler& labeler);

// One end-to-end run: optional KG training, generator training, generation on
// the test split, metrics. Artifacts land in out_dir when non-empty.
struct RunResult {
  TrainHistory history;
  MetricReport metrics;
  std::string metrics_json;
  int64_t param_count = 0;
};
RunResult run_training(const RunConfig& cfg, const RunData& data, const std::string& out_dir,
                       std::ostream* log = nullptr);

// One row of an ablation study.
struct AblationSpec {
  std::string label;       // table row name
  std::string flags_name;  // ablation configuration
  std::string kg_model;    // empty = keep base config's model
};

struct AblationRow {
  std::string label;
  uint64_t seed = 0;
  MetricReport metrics;
};

struct AblationTable {
  std::vector<std::string> labels;  // row-group order
  std::vector<AblationRow> rows;

  MetricReport mean_metrics(const std::string& label) const;
  double mean_bleu4(const std::string& label) const;
  std::string to_json() const;
  std::string to_text() const;
};

const std::vector<AblationSpec>& standard_ablations();
const std::vector<AblationSpec>& embedding_ablations();

AblationTable run_ablation(const RunConfig& base, const RunData& data,
                           const std::vector<uint64_t>& seeds,
                           const std::vector<AblationSpec>& specs, const std::string& out_dir,
                           std::ostream* log = nullptr);

// manifest.json content for a run; deterministic bytes (no timestamps).
std::string run_manifest(const std::string& command, const RunConfig& cfg,
                         const std::string& data_dir);

// ConfigError/ContractError/DimensionError -> 2, DataError/ParseError -> 3,
// NumericError -> 4, anything else -> 1.
int exit_code_for(const std::exception& e);

}  // namespace kerg
