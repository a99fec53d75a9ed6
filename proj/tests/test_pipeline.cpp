#include "kerg/pipeline.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

using namespace kerg;
namespace fs = std::filesystem;

namespace {

std::string labeler_path() { return std::string(KERG_SOURCE_DIR) + "/config/labels.toml"; }

// Small-but-real configuration that trains in seconds.
RunConfig desk_cfg() {
  RunConfig cfg;
  cfg.d = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ffn_hidden = 32;
  cfg.fact_len = 32;
  cfg.kg_dim = 8;
  cfg.kg_epochs = 5;
  cfg.kg_batch = 32;
  cfg.topk = 3;
  cfg.lr = 3e-3;
  cfg.encoder_lr = 1.5e-3;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 1;
  cfg.labeler_path = labeler_path();
  return cfg;
}

const RunData& tiny_data() {
  static const RunData data = make_run_data(WorldSpec::default_world(8, 5), 60);
  return data;
}

std::set<std::string> param_names(const Pipeline& pipe) {
  std::set<std::string> names;
  for (const auto& p : pipe.named_params()) names.insert(p.name);
  return names;
}

EmbeddingTables untrained_tables(const RunConfig& cfg, const KnowledgeGraph& g) {
  Rng rng(99);
  return init_tables(kg_model_from_string(cfg.kg_model), g.num_entities(), g.num_relations(),
                     cfg.kg_dim, rng);
}

}  // namespace

TEST_CASE("run config validation catches bad values") {
  RunConfig cfg = desk_cfg();
  CHECK_NOTHROW(cfg.validate());

  RunConfig bad = cfg;
  bad.heads = 3;  // does not divide d=16
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.kg_dim = 7;  // rotate needs even width
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.ablation = "wo_everything";
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = cfg;
  bad.kg_model = "complex";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config file and overrides merge in order") {
  const std::string path = (fs::temp_directory_path() / "kerg_run_cfg.ini").string();
  {
    std::ofstream os(path);
    os << "# small run\n"
       << "[model]\n"
       << "d = 24\n"
       << "heads = 3\n"
       << "[train]\n"
       << "epochs = 9\n"
       << "lr = 0.002   # high for tiny corpora\n"
       << "[kg]\n"
       << "kg-model = transe\n";
  }
  RunConfig cfg;
  apply_config_file(cfg, path);
  CHECK(cfg.d == 24);
  CHECK(cfg.heads == 3);
  CHECK(cfg.epochs == 9);
  CHECK(cfg.lr == doctest::Approx(0.002));
  CHECK(cfg.kg_model == "transe");
  CHECK(cfg.layers == 3);  // untouched default

  apply_override(cfg, "epochs", "4");
  CHECK(cfg.epochs == 4);

  CHECK_THROWS_AS(apply_override(cfg, "epochs", "four"), ConfigError);
  CHECK_THROWS_AS(apply_override(cfg, "momentum", "0.9"), ConfigError);
  CHECK_THROWS_AS(apply_config_file(cfg, path + ".missing"), ConfigError);

  {
    std::ofstream os(path);
    os << "epochs 4\n";
  }
  CHECK_THROWS_AS(apply_config_file(cfg, path), ConfigError);
  fs::remove(path);
}

TEST_CASE("config json round-trips and hashes are stable") {
  RunConfig cfg = desk_cfg();
  cfg.kg_model = "transr";
  cfg.seed = 42;
  const RunConfig back = config_from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  CHECK(back.hash() == cfg.hash());
  CHECK(cfg.hash().size() == 16);

  RunConfig other = cfg;
  other.lr = cfg.lr * 2;
  CHECK(other.hash() != cfg.hash());

  // manifests embed the config under a "config" key
  const RunConfig from_manifest = config_from_json(run_manifest("train", cfg, "data/"));
  CHECK(from_manifest.to_json() == cfg.to_json());

  CHECK_THROWS_AS(config_from_json("{\"d\": 16}"), ConfigError);
}

TEST_CASE("ablation names map to knowledge-path flags") {
  CHECK(ablation_names().size() == 5);
  const auto base = flags_for("base");
  CHECK(!base.use_gke);
  CHECK(!base.use_ske);
  CHECK(!base.use_kemha_bias);
  const auto wok = flags_for("wo_kemha");
  CHECK(wok.use_gke);
  CHECK(wok.use_ske);
  CHECK(!wok.use_kemha_bias);
  const auto wog = flags_for("wo_gke");
  CHECK(!wog.use_gke);
  CHECK(wog.use_ske);
  const auto wos = flags_for("wo_ske");
  CHECK(wos.use_gke);
  CHECK(!wos.use_ske);
  const auto full = flags_for("full");
  CHECK(full.use_gke);
  CHECK(full.use_ske);
  CHECK(full.use_kemha_bias);
  CHECK_THROWS_AS(flags_for("none"), ConfigError);
}

TEST_CASE("exception types map to documented exit codes") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(ContractError("x")) == 2);
  CHECK(exit_code_for(DimensionError("x")) == 2);
  CHECK(exit_code_for(DataError("x")) == 3);
  CHECK(exit_code_for(ParseError("x")) == 3);
  CHECK(exit_code_for(NumericError("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
}

TEST_CASE("ablated pipelines drop exactly their path's parameters") {
  const auto& data = tiny_data();
  RunConfig cfg = desk_cfg();
  const auto tables = untrained_tables(cfg, data.graph);
  const auto vocab = static_cast<int64_t>(data.ds.vocab.size());

  auto build = [&](const std::string& ablation) {
    RunConfig c = cfg;
    c.ablation = ablation;
    return init_pipeline(c, vocab, data.feature_dim(), data.graph,
                         ablation == "base" || ablation == "wo_gke" ? nullptr : &tables);
  };
  const auto full = build("full");
  const auto wo_kemha = build("wo_kemha");
  const auto wo_gke = build("wo_gke");
  const auto wo_ske = build("wo_ske");
  const auto base = build("base");

  // relation-bias stack is the only difference between full and wo_kemha
  CHECK(full.param_count() - wo_kemha.param_count() == cfg.heads * cfg.kg_dim);

  const auto full_names = param_names(full);
  const auto base_names = param_names(base);
  for (const auto& n : base_names) CHECK(full_names.count(n));

  for (const auto& n : param_names(wo_gke)) CHECK(n.rfind("gke.", 0) != 0);
  for (const auto& n : param_names(wo_ske)) CHECK(n.rfind("ske.", 0) != 0);
  CHECK(param_names(wo_kemha).count("gke.att.wr0") == 0);
  CHECK(full_names.count("gke.att.wr0") == 1);
  CHECK(full_names.count("gke.we") == 1);
  CHECK(full_names.count("ske.enc.embed") == 1);

  // general path needs tables
  RunConfig c = cfg;
  c.ablation = "full";
  CHECK_THROWS_AS(init_pipeline(c, vocab, data.feature_dim(), data.graph, nullptr), ConfigError);
}

TEST_CASE("forward_record assembles the memory from the enabled paths") {
  const auto& data = tiny_data();
  RunConfig cfg = desk_cfg();
  const auto tables = untrained_tables(cfg, data.graph);
  const auto vocab = static_cast<int64_t>(data.ds.vocab.size());
  const auto k = data.features[0]->rows();

  for (const auto& name : ablation_names()) {
    RunConfig c = cfg;
    c.ablation = name;
    const auto flags = flags_for(name);
    const auto pipe = init_pipeline(c, vocab, data.feature_dim(), data.graph,
                                    flags.use_gke ? &tables : nullptr);
    const TensorPtr entity_proj =
        flags.use_gke ? matmul(pipe.tables.entity, pipe.w_e) : nullptr;
    const auto& id = data.ds.train_ids[0];
    const auto facts = mine_for(pipe, data, data.rec(id).record.labels, id);
    const auto fwd = forward_record(pipe, data.feats(id), facts, entity_proj);
    const int64_t parts = 1 + (flags.use_gke ? 1 : 0) + (flags.use_ske ? 1 : 0);
    CHECK(fwd.memory->rows() == k * parts);
    CHECK(fwd.memory->cols() == cfg.d);
    CHECK(fwd.cls_logits->rows() == 1);
    CHECK(fwd.cls_logits->cols() == cfg.n_c);
    if (!flags.use_ske) CHECK(facts.facts.empty());
  }
}

TEST_CASE("mining uses retrieval and respects the exclusion id") {
  const auto& data = tiny_data();
  RunConfig cfg = desk_cfg();
  const auto tables = untrained_tables(cfg, data.graph);
  const auto pipe = init_pipeline(cfg, static_cast<int64_t>(data.ds.vocab.size()),
                                  data.feature_dim(), data.graph, &tables);
  const auto& id = data.ds.train_ids[0];
  const auto hits = retrieve_topk(data.index, data.rec(id).record.labels, cfg.topk, id);
  REQUIRE(!hits.empty());
  for (const auto& h : hits) CHECK(h.id != id);
  const auto facts = mine_for(pipe, data, data.rec(id).record.labels, id);
  // retrieved reports of a synthetic world always mention graph entities
  CHECK(!facts.facts.empty());
  CHECK(static_cast<int64_t>(facts.tokens.size()) <= cfg.fact_len);
}

TEST_CASE("a short full-pipeline run trains, scores, and reproduces") {
  RunConfig cfg = desk_cfg();
  const auto& data = tiny_data();
  const RunResult first = run_training(cfg, data, "");
  REQUIRE(first.history.epochs.size() == 2);
  CHECK(std::isfinite(first.history.epochs.back().train_nll));
  CHECK(first.history.epochs[1].train_nll < first.history.epochs[0].train_nll);
  CHECK(first.metrics.bleu[0] >= 0.0);
  CHECK(first.metrics.bleu[0] <= 1.0);
  CHECK(std::isfinite(first.metrics.cider));

  const RunResult second = run_training(cfg, data, "");
  CHECK(second.metrics_json == first.metrics_json);  // byte-identical rerun
}

TEST_CASE("run artifacts land on disk and the checkpoint reloads") {
  const std::string dir = (fs::temp_directory_path() / "kerg_run_out").string();
  fs::remove_all(dir);
  RunConfig cfg = desk_cfg();
  cfg.epochs = 1;
  const auto& data = tiny_data();
  const RunResult res = run_training(cfg, data, dir);

  for (const char* name : {"manifest.json", "checkpoint.bin", "tables.bin", "index.jsonl",
                           "history.json", "predictions.jsonl", "metrics.json"})
    CHECK(fs::exists(fs::path(dir) / name));

  // manifest reconstructs the exact config
  std::ifstream is(fs::path(dir) / "manifest.json");
  std::stringstream ss;
  ss << is.rdbuf();
  const RunConfig back = config_from_json(ss.str());
  CHECK(back.to_json() == cfg.to_json());

  // checkpoint loads into a same-config pipeline...
  const auto tables = load_tables((fs::path(dir) / "tables.bin").string());
  Pipeline pipe = init_pipeline(back, static_cast<int64_t>(data.ds.vocab.size()),
                                data.feature_dim(), data.graph, &tables);
  const auto info =
      load_checkpoint((fs::path(dir) / "checkpoint.bin").string(), pipe.named_params());
  CHECK(info.config_hash == cfg.hash());
  CHECK(res.param_count == pipe.param_count());

  // ...and refuses an ablated one
  RunConfig other = back;
  other.ablation = "wo_gke";
  Pipeline wrong = init_pipeline(other, static_cast<int64_t>(data.ds.vocab.size()),
                                 data.feature_dim(), data.graph, &tables);
  CHECK_THROWS_AS(load_checkpoint((fs::path(dir) / "checkpoint.bin").string(),
                                  wrong.named_params()),
                  ContractError);
  fs::remove_all(dir);
}

TEST_CASE("label width mismatches are caught up front") {
  RunConfig cfg = desk_cfg();
  cfg.n_c = 5;
  CHECK_THROWS_AS(run_training(cfg, tiny_data(), ""), ConfigError);
}

TEST_CASE("ablation study produces rows, means, and a table") {
  RunConfig cfg = desk_cfg();
  cfg.epochs = 1;
  const std::vector<AblationSpec> specs = {{"base", "base", ""}, {"full", "full", ""}};
  const auto table = run_ablation(cfg, tiny_data(), {1, 2}, specs, "");
  REQUIRE(table.rows.size() == 4);
  for (const auto& r : table.rows) {
    CHECK(std::isfinite(r.metrics.bleu[3]));
    CHECK(std::isfinite(r.metrics.rouge_l));
  }
  CHECK(std::isfinite(table.mean_bleu4("base")));
  CHECK(std::isfinite(table.mean_bleu4("full")));
  CHECK_THROWS_AS(table.mean_bleu4("missing"), ContractError);

  const auto text = table.to_text();
  CHECK(text.find("bleu4") != std::string::npos);
  CHECK(text.find("mean") != std::string::npos);
  CHECK(text.find("full") != std::string::npos);

  CHECK_THROWS_AS(run_ablation(cfg, tiny_data(), {}, specs, ""), ConfigError);

  // a failing sub-run names its configuration
  RunConfig bad = cfg;
  bad.n_c = 5;
  try {
    run_ablation(bad, tiny_data(), {1}, specs, "");
    FAIL("expected a config failure");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("base") != std::string::npos);
  }
}

TEST_CASE("standard and embedding ablation sets are as documented") {
  const auto& std_specs = standard_ablations();
  REQUIRE(std_specs.size() == 5);
  CHECK(std_specs.front().label == "base");
  CHECK(std_specs.back().label == "full");
  const auto& emb_specs = embedding_ablations();
  REQUIRE(emb_specs.size() == 4);
  CHECK(emb_specs[0].flags_name == "base");
  for (size_t i = 1; i < emb_specs.size(); ++i) CHECK(emb_specs[i].flags_name == "full");
}
