#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "kerg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace kerg;
using nlohmann::json;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << text;
}

// Shared config options: defaults <- --config file <- --set overrides <- flags.
struct ConfigCli {
  std::string config_file;
  std::vector<std::string> sets;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_file, "run config file ([section] + key = value lines)");
    cmd->add_option("--set", sets, "override a config key, e.g. --set epochs=5")
        ->type_name("KEY=VALUE");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw ConfigError("--set expects key=value, got '" + kv + "'");
      apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
  }
};

std::vector<uint64_t> parse_seeds(const std::string& spec) {
  std::vector<uint64_t> seeds;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    try {
      seeds.push_back(std::stoull(part));
    } catch (const std::exception&) {
      throw ConfigError("--seeds expects comma-separated integers, got '" + part + "'");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds is empty");
  return seeds;
}

// Loads a trained run directory back into a usable pipeline.
Pipeline load_run(const std::string& run_dir, const RunData& data) {
  const RunConfig cfg = config_from_json(slurp((fs::path(run_dir) / "manifest.json").string()));
  const AblationFlags flags = flags_for(cfg.ablation);
  EmbeddingTables tables;
  if (flags.use_gke) tables = load_tables((fs::path(run_dir) / "tables.bin").string());
  Pipeline pipe = init_pipeline(cfg, static_cast<int64_t>(data.ds.vocab.size()),
                                data.feature_dim(), data.graph, flags.use_gke ? &tables : nullptr);
  load_checkpoint((fs::path(run_dir) / "checkpoint.bin").string(), pipe.named_params());
  return pipe;
}

std::vector<std::pair<std::string, std::string>> read_id_text_jsonl(const std::string& path) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream lines(slurp(path));
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      out.emplace_back(j.at("id").get<std::string>(), j.at("text").get<std::string>());
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw DataError(path + ": no records");
  return out;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"kerg: knowledge-grounded report generation pipeline"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset directory");
  int64_t synth_records = 500;
  uint64_t synth_seed = 7;
  int64_t synth_fdim = 64;
  std::string synth_out;
  synth_cmd->add_option("--records", synth_records, "number of records")->required();
  synth_cmd->add_option("--seed", synth_seed, "world seed");
  synth_cmd->add_option("--feature-dim", synth_fdim, "feature grid width");
  synth_cmd->add_option("--out", synth_out, "output directory")->required();
  synth_cmd->callback([&] {
    const auto spec = WorldSpec::default_world(synth_fdim, synth_seed);
    write_dataset(spec, synth_records, synth_out);
    const auto ds = load_dataset(synth_out);
    std::cout << "wrote " << ds.records.size() << " records, vocab " << ds.vocab.size()
              << ", splits " << ds.train_ids.size() << "/" << ds.val_ids.size() << "/"
              << ds.test_ids.size() << " -> " << synth_out << "\n";
  });

  // ---- ingest ----
  auto* ingest_cmd = app.add_subcommand("ingest", "ingest a triplet TSV into a knowledge graph");
  std::string ingest_in, ingest_out;
  int64_t ingest_min = 1;
  ingest_cmd->add_option("--in", ingest_in, "triplet TSV (source\\trelation\\ttarget[\\tcount])")
      ->required();
  ingest_cmd->add_option("--min-count", ingest_min, "entity frequency floor");
  ingest_cmd->add_option("--out", ingest_out, "write the normalized graph TSV here");
  ingest_cmd->callback([&] {
    const auto g = ingest(read_triplet_tsv(ingest_in), ingest_min);
    std::cout << "entities " << g.num_entities() << ", relations " << g.num_relations()
              << ", triplets " << g.num_triplets() << "\n";
    if (!ingest_out.empty()) write_triplet_tsv(g, ingest_out);
  });

  // ---- train-kg ----
  auto* tkg_cmd = app.add_subcommand("train-kg", "train knowledge-graph embeddings");
  std::string tkg_kg, tkg_out, tkg_model = "rotate";
  int64_t tkg_dim = 400, tkg_epochs = 200, tkg_neg = 4, tkg_batch = 128, tkg_min = 1;
  double tkg_lr = 1e-2, tkg_margin = 6.0;
  uint64_t tkg_seed = 1;
  tkg_cmd->add_option("--kg", tkg_kg, "triplet TSV")->required();
  tkg_cmd->add_option("--out", tkg_out, "tables output file")->required();
  tkg_cmd->add_option("--model", tkg_model, "rotate|transe|transr");
  tkg_cmd->add_option("--dim", tkg_dim, "embedding width");
  tkg_cmd->add_option("--epochs", tkg_epochs);
  tkg_cmd->add_option("--lr", tkg_lr);
  tkg_cmd->add_option("--margin", tkg_margin);
  tkg_cmd->add_option("--negatives", tkg_neg);
  tkg_cmd->add_option("--batch", tkg_batch);
  tkg_cmd->add_option("--seed", tkg_seed);
  tkg_cmd->add_option("--min-count", tkg_min, "entity frequency floor");
  tkg_cmd->callback([&] {
    const auto g = ingest(read_triplet_tsv(tkg_kg), tkg_min);
    KgEmbedConfig kc;
    kc.model = kg_model_from_string(tkg_model);
    kc.dim = tkg_dim;
    kc.epochs = tkg_epochs;
    kc.lr = tkg_lr;
    kc.margin = tkg_margin;
    kc.negatives = tkg_neg;
    kc.batch = tkg_batch;
    kc.seed = tkg_seed;
    KgTrainStats stats;
    const auto tables = train_kg(g, kc, &stats);
    save_tables(tables, tkg_out, tkg_seed);
    const auto fit = link_prediction_eval(tables, g.triplets, g.triplets);
    std::cout << "final epoch loss " << (stats.epoch_loss.empty() ? 0.0 : stats.epoch_loss.back())
              << ", train hits@1 " << fit.hits1 << ", hits@10 " << fit.hits10 << ", mrr "
              << fit.mrr << "\n";
  });

  // ---- index ----
  auto* index_cmd = app.add_subcommand("index", "build the train-split retrieval index");
  std::string index_data, index_out;
  index_cmd->add_option("--data", index_data, "dataset directory")->required();
  index_cmd->add_option("--out", index_out, "index JSONL path")->required();
  index_cmd->callback([&] {
    const auto data = load_run_data(index_data);
    save_index_jsonl(data.index, index_out);
    std::cout << "indexed " << data.index.entries.size() << " records -> " << index_out << "\n";
  });

  // ---- mine ----
  auto* mine_cmd = app.add_subcommand("mine", "retrieve similar records and mine facts for one id");
  std::string mine_data, mine_id;
  int64_t mine_topk = 10, mine_len = 128;
  mine_cmd->add_option("--data", mine_data, "dataset directory")->required();
  mine_cmd->add_option("--record", mine_id, "query record id")->required();
  mine_cmd->add_option("--topk", mine_topk);
  mine_cmd->add_option("--fact-len", mine_len, "token cap for the fact sequence");
  mine_cmd->callback([&] {
    const auto data = load_run_data(mine_data);
    const auto& sr = data.rec(mine_id);
    const auto hits = retrieve_topk(data.index, sr.record.labels, mine_topk, mine_id);
    std::vector<RetrievedReport> reports;
    for (const auto& h : hits) {
      reports.push_back({h.id, data.words[static_cast<size_t>(data.by_id.at(h.id))]});
      std::cout << "retrieved " << h.id << " score " << h.score << "\n";
    }
    const auto gaz = build_gazetteer(data.graph);
    const auto vocab = FactVocab::from_graph(data.graph);
    const auto facts = mine_facts(data.graph, reports, gaz, vocab, mine_len);
    for (const auto& t : facts.facts)
      std::cout << "fact " << data.graph.entity_names[static_cast<size_t>(t.source)] << " "
                << data.graph.relation_names[static_cast<size_t>(t.relation)] << " "
                << data.graph.entity_names[static_cast<size_t>(t.target)] << "\n";
  });

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train the full pipeline on a dataset");
  std::string train_data, train_out;
  ConfigCli train_cfg_cli;
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "run output directory")->required();
  train_cfg_cli.attach(train_cmd);
  train_cmd->callback([&] {
    const RunConfig cfg = train_cfg_cli.resolve();
    const auto data = load_run_data(train_data, cfg.min_count);
    run_training(cfg, data, train_out, &std::cerr);
    std::cout << slurp((fs::path(train_out) / "metrics.json").string());
  });

  // ---- generate ----
  auto* gen_cmd = app.add_subcommand("generate", "decode reports with a trained run");
  std::string gen_data, gen_run, gen_split = "test", gen_out, gen_refs;
  int64_t gen_beam = 0;
  gen_cmd->add_option("--data", gen_data, "dataset directory")->required();
  gen_cmd->add_option("--run", gen_run, "trained run directory")->required();
  gen_cmd->add_option("--split", gen_split, "train|val|test");
  gen_cmd->add_option("--beam", gen_beam, "beam width override (0 = keep run config)");
  gen_cmd->add_option("--out", gen_out, "predictions JSONL")->required();
  gen_cmd->add_option("--refs", gen_refs, "also write gold references JSONL here");
  gen_cmd->callback([&] {
    const auto data = load_run_data(gen_data);
    Pipeline pipe = load_run(gen_run, data);
    if (gen_beam > 0) pipe.cfg.beam = gen_beam;
    const std::vector<std::string>* ids = nullptr;
    if (gen_split == "train")
      ids = &data.ds.train_ids;
    else if (gen_split == "val")
      ids = &data.ds.val_ids;
    else if (gen_split == "test")
      ids = &data.ds.test_ids;
    else
      throw ConfigError("--split must be train, val, or test");
    const auto preds = generate_split(pipe, data, *ids);
    std::string lines;
    for (const auto& p : preds) lines += json{{"id", p.id}, {"text", p.text}}.dump() + "\n";
    write_text(gen_out, lines);
    if (!gen_refs.empty()) {
      std::string refs;
      for (const auto& id : *ids)
        refs += json{{"id", id}, {"text", data.rec(id).report_text}}.dump() + "\n";
      write_text(gen_refs, refs);
    }
    std::cout << "decoded " << preds.size() << " reports -> " << gen_out << "\n";
  });

  // ---- evaluate ----
  auto* eval_cmd = app.add_subcommand("evaluate", "score predictions against references");
  std::string eval_pred, eval_ref, eval_labeler = "config/labels.toml", eval_out;
  eval_cmd->add_option("--pred", eval_pred, "predictions JSONL ({id, text})")->required();
  eval_cmd->add_option("--ref", eval_ref, "references JSONL ({id, text})")->required();
  eval_cmd->add_option("--labeler", eval_labeler, "keyword labeler TOML");
  eval_cmd->add_option("--out", eval_out, "metrics JSON path (default: stdout only)");
  eval_cmd->callback([&] {
    const auto preds = read_id_text_jsonl(eval_pred);
    const auto refs = read_id_text_jsonl(eval_ref);
    std::map<std::string, std::string> ref_by_id(refs.begin(), refs.end());
    std::vector<TokenSeq> cand_toks, ref_toks;
    for (const auto& [id, text] : preds) {
      const auto it = ref_by_id.find(id);
      if (it == ref_by_id.end()) throw DataError("no reference for prediction id '" + id + "'");
      cand_toks.push_back(tokenize_report(text));
      ref_toks.push_back(tokenize_report(it->second));
    }
    const auto labeler = KeywordLabeler::from_toml(eval_labeler);
    const auto report = evaluate_pairs(cand_toks, ref_toks, labeler);
    std::cout << report.to_json() << "\n";
    if (!eval_out.empty()) write_text(eval_out, report.to_json() + "\n");
  });

  // ---- ablate ----
  auto* abl_cmd = app.add_subcommand("ablate", "train and score a set of configurations");
  std::string abl_data, abl_out, abl_seeds = "1,2,3";
  bool abl_embeddings = false;
  ConfigCli abl_cfg_cli;
  abl_cmd->add_option("--data", abl_data, "dataset directory")->required();
  abl_cmd->add_option("--out", abl_out, "output directory for runs and the table");
  abl_cmd->add_option("--seeds", abl_seeds, "comma-separated seeds");
  abl_cmd->add_flag("--embeddings", abl_embeddings,
                    "compare kg embedding models instead of knowledge paths");
  abl_cfg_cli.attach(abl_cmd);
  abl_cmd->callback([&] {
    const RunConfig cfg = abl_cfg_cli.resolve();
    const auto data = load_run_data(abl_data, cfg.min_count);
    const auto& specs = abl_embeddings ? embedding_ablations() : standard_ablations();
    const auto table = run_ablation(cfg, data, parse_seeds(abl_seeds), specs, abl_out, &std::cerr);
    std::cout << table.to_text();
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // bad flags are config errors
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
}
