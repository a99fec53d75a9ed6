#include "kerg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <json.hpp>

namespace kerg {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int64_t to_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const int64_t v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects an integer, got '" + value + "'");
  }
}

double to_real(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: " + key + " expects a number, got '" + value + "'");
  }
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

}  // namespace

void RunConfig::validate() const {
  auto positive = [](const char* name, auto v) {
    if (v <= 0) throw ConfigError(std::string("config: ") + name + " must be positive");
  };
  positive("d", d);
  positive("layers", layers);
  positive("heads", heads);
  positive("ffn-hidden", ffn_hidden);
  positive("n-c", n_c);
  positive("fact-len", fact_len);
  positive("fact-layers", fact_layers);
  positive("kg-dim", kg_dim);
  positive("kg-epochs", kg_epochs);
  positive("kg-lr", kg_lr);
  positive("kg-margin", kg_margin);
  positive("kg-negatives", kg_negatives);
  positive("kg-batch", kg_batch);
  positive("min-count", min_count);
  positive("topk", topk);
  positive("lr", lr);
  positive("encoder-lr", encoder_lr);
  positive("epochs", epochs);
  positive("batch-size", batch_size);
  positive("beam", beam);
  if (max_len < 2) throw ConfigError("config: max-len must be at least 2");
  if (weight_decay < 0) throw ConfigError("config: weight-decay must be non-negative");
  if (lambda_cls < 0) throw ConfigError("config: lambda-cls must be non-negative");
  if (d % heads != 0) throw ConfigError("config: heads must divide d");
  try {
    kg_model_from_string(kg_model);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (kg_model == "rotate" && kg_dim % 2 != 0)
    throw ConfigError("config: rotate needs an even kg-dim");
  flags_for(ablation);
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.lr = lr;
  t.weight_decay = weight_decay;
  t.encoder_lr = encoder_lr;
  t.epochs = epochs;
  t.batch_size = batch_size;
  t.seed = seed;
  t.lambda_cls = lambda_cls;
  return t;
}

KgEmbedConfig RunConfig::kg_config() const {
  KgEmbedConfig k;
  k.model = kg_model_from_string(kg_model);
  k.dim = kg_dim;
  k.epochs = kg_epochs;
  k.lr = kg_lr;
  k.margin = kg_margin;
  k.negatives = kg_negatives;
  k.batch = kg_batch;
  k.seed = seed + 101;  // kg stream distinct from generator init/shuffles
  return k;
}

std::string RunConfig::to_json() const {
  return json{{"ablation", ablation},
              {"batch-size", batch_size},
              {"beam", beam},
              {"d", d},
              {"encoder-lr", encoder_lr},
              {"epochs", epochs},
              {"fact-layers", fact_layers},
              {"fact-len", fact_len},
              {"ffn-hidden", ffn_hidden},
              {"heads", heads},
              {"kg-batch", kg_batch},
              {"kg-dim", kg_dim},
              {"kg-epochs", kg_epochs},
              {"kg-lr", kg_lr},
              {"kg-margin", kg_margin},
              {"kg-model", kg_model},
              {"kg-negatives", kg_negatives},
              {"labeler", labeler_path},
              {"lambda-cls", lambda_cls},
              {"layers", layers},
              {"lr", lr},
              {"max-len", max_len},
              {"min-count", min_count},
              {"n-c", n_c},
              {"seed", seed},
              {"topk", topk},
              {"weight-decay", weight_decay}}
      .dump();
}

std::string RunConfig::hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : to_json()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "d")
    cfg.d = to_int(key, value);
  else if (key == "layers")
    cfg.layers = to_int(key, value);
  else if (key == "heads")
    cfg.heads = to_int(key, value);
  else if (key == "ffn-hidden")
    cfg.ffn_hidden = to_int(key, value);
  else if (key == "max-len")
    cfg.max_len = to_int(key, value);
  else if (key == "n-c")
    cfg.n_c = to_int(key, value);
  else if (key == "fact-len")
    cfg.fact_len = to_int(key, value);
  else if (key == "fact-layers")
    cfg.fact_layers = to_int(key, value);
  else if (key == "kg-model")
    cfg.kg_model = value;
  else if (key == "kg-dim")
    cfg.kg_dim = to_int(key, value);
  else if (key == "kg-epochs")
    cfg.kg_epochs = to_int(key, value);
  else if (key == "kg-lr")
    cfg.kg_lr = to_real(key, value);
  else if (key == "kg-margin")
    cfg.kg_margin = to_real(key, value);
  else if (key == "kg-negatives")
    cfg.kg_negatives = to_int(key, value);
  else if (key == "kg-batch")
    cfg.kg_batch = to_int(key, value);
  else if (key == "min-count")
    cfg.min_count = to_int(key, value);
  else if (key == "topk")
    cfg.topk = to_int(key, value);
  else if (key == "lr")
    cfg.lr = to_real(key, value);
  else if (key == "weight-decay")
    cfg.weight_decay = to_real(key, value);
  else if (key == "encoder-lr")
    cfg.encoder_lr = to_real(key, value);
  else if (key == "lambda-cls")
    cfg.lambda_cls = to_real(key, value);
  else if (key == "epochs")
    cfg.epochs = to_int(key, value);
  else if (key == "batch-size")
    cfg.batch_size = to_int(key, value);
  else if (key == "seed")
    cfg.seed = static_cast<uint64_t>(to_int(key, value));
  else if (key == "beam")
    cfg.beam = to_int(key, value);
  else if (key == "labeler")
    cfg.labeler_path = value;
  else if (key == "ablation")
    cfg.ablation = value;
  else
    throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig config_from_json(const std::string& text) {
  RunConfig cfg;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config json: ") + e.what());
  }
  if (j.contains("config")) j = j.at("config");
  try {
    cfg.ablation = j.at("ablation").get<std::string>();
    cfg.batch_size = j.at("batch-size").get<int64_t>();
    cfg.beam = j.at("beam").get<int64_t>();
    cfg.d = j.at("d").get<int64_t>();
    cfg.encoder_lr = j.at("encoder-lr").get<double>();
    cfg.epochs = j.at("epochs").get<int64_t>();
    cfg.fact_layers = j.at("fact-layers").get<int64_t>();
    cfg.fact_len = j.at("fact-len").get<int64_t>();
    cfg.ffn_hidden = j.at("ffn-hidden").get<int64_t>();
    cfg.heads = j.at("heads").get<int64_t>();
    cfg.kg_batch = j.at("kg-batch").get<int64_t>();
    cfg.kg_dim = j.at("kg-dim").get<int64_t>();
    cfg.kg_epochs = j.at("kg-epochs").get<int64_t>();
    cfg.kg_lr = j.at("kg-lr").get<double>();
    cfg.kg_margin = j.at("kg-margin").get<double>();
    cfg.kg_model = j.at("kg-model").get<std::string>();
    cfg.kg_negatives = j.at("kg-negatives").get<int64_t>();
    cfg.labeler_path = j.at("labeler").get<std::string>();
    cfg.lambda_cls = j.at("lambda-cls").get<double>();
    cfg.layers = j.at("layers").get<int64_t>();
    cfg.lr = j.at("lr").get<double>();
    cfg.max_len = j.at("max-len").get<int64_t>();
    cfg.min_count = j.at("min-count").get<int64_t>();
    cfg.n_c = j.at("n-c").get<int64_t>();
    cfg.seed = j.at("seed").get<uint64_t>();
    cfg.topk = j.at("topk").get<int64_t>();
    cfg.weight_decay = j.at("weight-decay").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config json: ") + e.what());
  }
  return cfg;
}

void apply_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.erase(hash_pos);
    const std::string s = trim(line);
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']')
        throw ConfigError("config: " + path + ":" + std::to_string(lineno) + ": bad section");
      continue;  // sections group keys for the reader; keys are globally unique
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: " + path + ":" + std::to_string(lineno) + ": expected key = value");
    apply_override(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
}

AblationFlags flags_for(const std::string& name) {
  AblationFlags f;
  if (name == "base") {
    f.use_gke = f.use_ske = f.use_kemha_bias = false;
  } else if (name == "wo_kemha") {
    f.use_kemha_bias = false;
  } else if (name == "wo_gke") {
    f.use_gke = false;
  } else if (name == "wo_ske") {
    f.use_ske = false;
  } else if (name != "full") {
    throw ConfigError("config: unknown ablation '" + name +
                      "' (base|wo_kemha|wo_gke|wo_ske|full)");
  }
  return f;
}

const std::vector<std::string>& ablation_names() {
  static const std::vector<std::string> names = {"base", "wo_kemha", "wo_gke", "wo_ske", "full"};
  return names;
}

const SynthRecord& RunData::rec(const std::string& id) const {
  const auto it = by_id.find(id);
  if (it == by_id.end()) throw DataError("unknown record id '" + id + "'");
  return ds.records[static_cast<size_t>(it->second)];
}

const TensorPtr& RunData::feats(const std::string& id) const {
  const auto it = by_id.find(id);
  if (it == by_id.end()) throw DataError("unknown record id '" + id + "'");
  return features[static_cast<size_t>(it->second)];
}

int64_t RunData::feature_dim() const { return features.empty() ? 0 : features[0]->cols(); }

namespace {

void finish_run_data(RunData& data) {
  for (size_t i = 0; i < data.ds.records.size(); ++i) {
    data.by_id[data.ds.records[i].record.id] = static_cast<int64_t>(i);
    data.words.push_back(tokenize_report(data.ds.records[i].report_text));
  }
  for (const auto& id : data.ds.train_ids) {
    const auto& sr = data.ds.records[static_cast<size_t>(data.by_id.at(id))];
    data.index.entries.push_back({sr.record.id, sr.record.labels, ""});
  }
}

}  // namespace

RunData load_run_data(const std::string& dir, int64_t min_count) {
  RunData data;
  try {
    data.ds = load_dataset(dir);
    data.graph = ingest(read_triplet_tsv((fs::path(dir) / "kg.tsv").string()), min_count);
    const Encoder enc = Encoder::passthrough();
    for (const auto& sr : data.ds.records) data.features.push_back(encode(sr.record, enc));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw DataError(std::string("load_run_data: ") + e.what());
  }
  finish_run_data(data);
  return data;
}

RunData make_run_data(const WorldSpec& spec, int64_t n_records, int64_t min_count) {
  RunData data;
  std::vector<std::vector<TensorPtr>> grids;
  data.ds = generate(spec, n_records, &grids);
  data.graph = ingest(spec.kg_rules, min_count);
  for (auto& views : grids) {
    if (views.size() == 1) {
      data.features.push_back(views[0]);
      continue;
    }
    auto pooled = Tensor::zeros(views[0]->shape);
    for (const auto& v : views)
      for (int64_t i = 0; i < v->size(); ++i) pooled->at(i) += v->at(i) / views.size();
    data.features.push_back(pooled);
  }
  finish_run_data(data);
  return data;
}

std::vector<NamedParam> Pipeline::named_params() const {
  std::vector<NamedParam> out = {{"vis.w", w_v}, {"vis.b", b_v}};
  for (auto& p : head.named_params("cls")) out.push_back(p);
  if (flags.use_gke) {
    out.push_back({"gke.we", w_e});
    for (auto& p : gke_att.named_params("gke.att")) out.push_back(p);
  }
  if (flags.use_ske) {
    for (auto& p : fact_enc.named_params("ske.enc")) out.push_back(p);
    for (auto& p : ske_att.named_params("ske.att")) out.push_back(p);
  }
  for (auto& p : gen.named_params("gen")) out.push_back(p);
  return out;
}

int64_t Pipeline::param_count() const {
  int64_t n = 0;
  for (const auto& p : named_params()) n += p.tensor->size();
  return n;
}

Adam Pipeline::make_optimizer() const {
  AdamGroup decoder;
  decoder.lr = cfg.lr;
  decoder.params = gen.trainable();
  if (flags.use_gke) {
    decoder.params.push_back(w_e);
    for (auto& t : gke_att.trainable()) decoder.params.push_back(t);
  }
  if (flags.use_ske) {
    for (auto& t : fact_enc.trainable()) decoder.params.push_back(t);
    for (auto& t : ske_att.trainable()) decoder.params.push_back(t);
  }
  AdamGroup encoder;
  encoder.lr = cfg.encoder_lr;
  encoder.params = {w_v, b_v, head.w, head.b};
  return Adam({decoder, encoder}, cfg.weight_decay);
}

Pipeline init_pipeline(const RunConfig& cfg, int64_t vocab_size, int64_t feature_dim,
                       const KnowledgeGraph& graph, const EmbeddingTables* tables) {
  cfg.validate();
  if (feature_dim < 1) throw ConfigError("init_pipeline: empty feature grid");
  Pipeline pipe;
  pipe.cfg = cfg;
  pipe.flags = flags_for(cfg.ablation);

  Rng rng = Rng(cfg.seed).fork(1);
  pipe.w_v = Tensor::randn({feature_dim, cfg.d}, rng, 1.0 / std::sqrt(double(feature_dim)));
  pipe.b_v = Tensor::leaf({1, cfg.d}, true);
  pipe.head = LabelHead::init(cfg.d, cfg.n_c, rng);

  if (pipe.flags.use_gke) {
    if (!tables) throw ConfigError("init_pipeline: '" + cfg.ablation + "' needs trained tables");
    if (tables->dim != cfg.kg_dim)
      throw ConfigError("init_pipeline: tables dim " + std::to_string(tables->dim) +
                        " != kg-dim " + std::to_string(cfg.kg_dim));
    pipe.tables = *tables;
    for (auto& p : pipe.tables.named_params())
      p.tensor->requires_grad = false;  // knowledge embeddings stay frozen here
    pipe.w_e = Tensor::randn({cfg.kg_dim, cfg.d}, rng, 1.0 / std::sqrt(double(cfg.kg_dim)));
    pipe.gke_att =
        KemhaParams::init(cfg.d, cfg.heads, pipe.flags.use_kemha_bias ? cfg.kg_dim : 0, rng);
    if (pipe.flags.use_kemha_bias) pipe.bank = build_relation_bank(graph, pipe.tables);
  }
  if (pipe.flags.use_ske) {
    pipe.gaz = build_gazetteer(graph);
    pipe.fact_vocab = FactVocab::from_graph(graph);
    pipe.fact_enc = FactEncoder::init(pipe.fact_vocab.size(), cfg.d, cfg.fact_layers, cfg.heads,
                                      cfg.ffn_hidden, rng);
    pipe.ske_att = KemhaParams::init(cfg.d, cfg.heads, 0, rng);
  }
  pipe.gen = GeneratorModel::init(vocab_size, cfg.d, cfg.layers, cfg.heads, cfg.ffn_hidden,
                                  pipe.flags, rng, cfg.max_len);
  return pipe;
}

RecordForward forward_record(const Pipeline& pipe, const TensorPtr& raw_feats,
                             const FactSequence& facts, const TensorPtr& entity_proj) {
  RecordForward f;
  f.visual = add_row_broadcast(matmul(raw_feats, pipe.w_v), pipe.b_v);
  f.cls_logits = label_logits(pipe.head, f.visual);
  TensorPtr c_g, c_s;
  if (pipe.flags.use_gke)
    c_g = general_context(pipe.gke_att, f.visual, entity_proj,
                          pipe.flags.use_kemha_bias ? &pipe.bank : nullptr);
  if (pipe.flags.use_ske) c_s = specific_context(pipe.ske_att, f.visual, pipe.fact_enc, facts);
  f.memory = build_memory(f.visual, c_g, c_s);
  return f;
}

FactSequence mine_for(const Pipeline& pipe, const RunData& data, const std::vector<double>& y,
                      const std::string& exclude_id) {
  if (!pipe.flags.use_ske) return {};
  const auto hits = retrieve_topk(data.index, y, pipe.cfg.topk, exclude_id);
  std::vector<RetrievedReport> reports;
  for (const auto& h : hits)
    reports.push_back({h.id, data.words[static_cast<size_t>(data.by_id.at(h.id))]});
  return mine_facts(data.graph, reports, pipe.gaz, pipe.fact_vocab, pipe.cfg.fact_len);
}

namespace {

std::vector<int64_t> full_sequence(const Record& rec) {
  std::vector<int64_t> toks;
  toks.reserve(rec.report.size() + 2);
  toks.push_back(kBosId);
  toks.insert(toks.end(), rec.report.begin(), rec.report.end());
  toks.push_back(kEosId);
  return toks;
}

// Gold-retrieval fact sequences for a split, mined once per run.
std::unordered_map<std::string, FactSequence> mine_split(const Pipeline& pipe, const RunData& data,
                                                         const std::vector<std::string>& ids) {
  std::unordered_map<std::string, FactSequence> out;
  if (!pipe.flags.use_ske) return out;
  for (const auto& id : ids) out[id] = mine_for(pipe, data, data.rec(id).record.labels, id);
  return out;
}

GenExample make_example(const Pipeline& pipe, const RunData& data, const std::string& id,
                        const FactSequence& facts, const TensorPtr& entity_proj) {
  const auto& sr = data.rec(id);
  auto fwd = forward_record(pipe, data.feats(id), facts, entity_proj);
  GenExample ex;
  ex.memory = fwd.memory;
  ex.tokens = full_sequence(sr.record);
  ex.cls_logits = fwd.cls_logits;
  ex.labels = sr.record.labels;
  return ex;
}

}  // namespace

TrainHistory train_pipeline(Pipeline& pipe, const RunData& data, std::ostream* log) {
  const RunConfig& cfg = pipe.cfg;
  const TrainConfig tcfg = cfg.train_config();
  tcfg.validate();
  if (data.ds.train_ids.empty()) throw DataError("train_pipeline: empty train split");

  Adam opt = pipe.make_optimizer();
  Rng root(cfg.seed);
  // Retrieval during training is teacher-forced with gold label distributions;
  // validation reuses them since val_nll is a language-model diagnostic.
  const auto train_facts = mine_split(pipe, data, data.ds.train_ids);
  const auto val_facts = mine_split(pipe, data, data.ds.val_ids);
  const FactSequence no_facts;
  auto facts_of = [&](const std::unordered_map<std::string, FactSequence>& m,
                      const std::string& id) -> const FactSequence& {
    const auto it = m.find(id);
    return it == m.end() ? no_facts : it->second;
  };

  TrainHistory hist;
  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::string> order = data.ds.train_ids;
    Rng shuf = root.fork(7000 + static_cast<uint64_t>(epoch));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(shuf.uniform_int(i))]);

    double nll_sum = 0.0, cls_sum = 0.0;
    int64_t seen = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      const TensorPtr entity_proj =
          pipe.flags.use_gke ? matmul(pipe.tables.entity, pipe.w_e) : nullptr;
      std::vector<GenExample> batch;
      for (size_t i = start; i < end; ++i)
        batch.push_back(
            make_example(pipe, data, order[i], facts_of(train_facts, order[i]), entity_proj));
      const StepStats stats = train_step(pipe.gen, batch, tcfg, opt);
      const auto bsz = static_cast<int64_t>(batch.size());
      nll_sum += stats.nll * bsz;
      cls_sum += stats.cls * bsz;
      seen += bsz;
    }

    double val_sum = 0.0;
    int64_t val_seen = 0;
    for (size_t start = 0; start < data.ds.val_ids.size();
         start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end =
          std::min(data.ds.val_ids.size(), start + static_cast<size_t>(cfg.batch_size));
      const TensorPtr entity_proj =
          pipe.flags.use_gke ? matmul(pipe.tables.entity, pipe.w_e) : nullptr;
      std::vector<GenExample> batch;
      for (size_t i = start; i < end; ++i) {
        const auto& id = data.ds.val_ids[i];
        batch.push_back(make_example(pipe, data, id, facts_of(val_facts, id), entity_proj));
      }
      val_sum += batch_loss(pipe.gen, batch, cfg.lambda_cls).nll->scalar_value() *
                 static_cast<double>(batch.size());
      val_seen += static_cast<int64_t>(batch.size());
    }

    EpochStats es;
    es.epoch = epoch;
    es.train_nll = nll_sum / static_cast<double>(seen);
    es.train_cls = cls_sum / static_cast<double>(seen);
    es.val_nll = val_seen ? val_sum / static_cast<double>(val_seen) : 0.0;
    hist.epochs.push_back(es);
    if (log)
      (*log) << "epoch " << epoch << "/" << cfg.epochs << "  train_nll " << es.train_nll
             << "  train_cls " << es.train_cls << "  val_nll " << es.val_nll << "\n";
  }
  return hist;
}

std::vector<Prediction> generate_split(const Pipeline& pipe, const RunData& data,
                                       const std::vector<std::string>& ids) {
  const TensorPtr entity_proj = pipe.flags.use_gke ? matmul(pipe.tables.entity, pipe.w_e) : nullptr;
  std::vector<Prediction> preds;
  for (const auto& id : ids) {
    // Inference retrieval keys on the predicted label distribution.
    const auto visual = add_row_broadcast(matmul(data.feats(id), pipe.w_v), pipe.b_v);
    const auto y_hat = label_distribution(pipe.head, visual)->data;
    const auto facts = mine_for(pipe, data, y_hat, id);
    const auto fwd = forward_record(pipe, data.feats(id), facts, entity_proj);
    Prediction p;
    p.id = id;
    p.body = generate(pipe.gen, fwd.memory, pipe.cfg.max_len, pipe.cfg.beam);
    std::string text;
    for (size_t i = 0; i < p.body.size(); ++i) {
      if (i) text += ' ';
      text += data.ds.vocab[static_cast<size_t>(p.body[i])];
    }
    p.text = text;
    preds.push_back(std::move(p));
  }
  return preds;
}

MetricReport evaluate_predictions(const std::vector<Prediction>& preds, const RunData& data,
                                  const KeywordLabeler& labeler) {
  std::vector<TokenSeq> cands, refs;
  for (const auto& p : preds) {
    cands.push_back(tokenize_report(p.text));
    refs.push_back(data.words[static_cast<size_t>(data.by_id.at(p.id))]);
  }
  return evaluate_pairs(cands, refs, labeler);
}

RunResult run_training(const RunConfig& cfg, const RunData& data, const std::string& out_dir,
                       std::ostream* log) {
  cfg.validate();
  if (data.ds.records.empty()) throw DataError("run_training: empty dataset");
  if (static_cast<int64_t>(data.ds.records[0].record.labels.size()) != cfg.n_c)
    throw ConfigError("run_training: n-c " + std::to_string(cfg.n_c) + " != dataset label width " +
                      std::to_string(data.ds.records[0].record.labels.size()));
  const AblationFlags flags = flags_for(cfg.ablation);
  const KeywordLabeler labeler = KeywordLabeler::from_toml(cfg.labeler_path);

  EmbeddingTables tables;
  if (flags.use_gke) {
    if (data.graph.num_triplets() == 0)
      throw DataError("run_training: knowledge graph is empty but '" + cfg.ablation +
                      "' needs one");
    if (log) (*log) << "training " << cfg.kg_model << " embeddings\n";
    tables = train_kg(data.graph, cfg.kg_config());
  }

  Pipeline pipe =
      init_pipeline(cfg, static_cast<int64_t>(data.ds.vocab.size()), data.feature_dim(),
                    data.graph, flags.use_gke ? &tables : nullptr);
  RunResult res;
  res.param_count = pipe.param_count();
  if (log) (*log) << "trainable parameters: " << res.param_count << "\n";
  res.history = train_pipeline(pipe, data, log);
  const auto preds = generate_split(pipe, data, data.ds.test_ids);
  res.metrics = evaluate_predictions(preds, data, labeler);
  res.metrics_json = res.metrics.to_json();
  if (log) (*log) << "test metrics: " << res.metrics_json << "\n";

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "manifest.json", run_manifest("train", cfg, ""));
    save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), pipe.named_params(),
                    cfg.hash(), cfg.seed);
    if (flags.use_gke)
      save_tables(tables, (fs::path(out_dir) / "tables.bin").string(), cfg.kg_config().seed);
    save_index_jsonl(data.index, (fs::path(out_dir) / "index.jsonl").string());
    json hist = json::array();
    for (const auto& e : res.history.epochs)
      hist.push_back({{"epoch", e.epoch},
                      {"train_nll", e.train_nll},
                      {"train_cls", e.train_cls},
                      {"val_nll", e.val_nll}});
    write_text(fs::path(out_dir) / "history.json", json{{"epochs", hist}}.dump(2) + "\n");
    std::string pred_lines;
    for (const auto& p : preds)
      pred_lines += json{{"id", p.id}, {"text", p.text}}.dump() + "\n";
    write_text(fs::path(out_dir) / "predictions.jsonl", pred_lines);
    write_text(fs::path(out_dir) / "metrics.json", res.metrics_json + "\n");
  }
  return res;
}

MetricReport AblationTable::mean_metrics(const std::string& label) const {
  MetricReport mean;
  int64_t n = 0;
  for (const auto& r : rows) {
    if (r.label != label) continue;
    for (size_t i = 0; i < 4; ++i) mean.bleu[i] += r.metrics.bleu[i];
    mean.rouge_l += r.metrics.rouge_l;
    mean.cider += r.metrics.cider;
    mean.ce.accuracy += r.metrics.ce.accuracy;
    mean.ce.precision += r.metrics.ce.precision;
    mean.ce.recall += r.metrics.ce.recall;
    mean.ce.f1 += r.metrics.ce.f1;
    ++n;
  }
  if (n == 0) throw ContractError("ablation table: no rows for '" + label + "'");
  for (size_t i = 0; i < 4; ++i) mean.bleu[i] /= n;
  mean.rouge_l /= n;
  mean.cider /= n;
  mean.ce.accuracy /= n;
  mean.ce.precision /= n;
  mean.ce.recall /= n;
  mean.ce.f1 /= n;
  return mean;
}

double AblationTable::mean_bleu4(const std::string& label) const {
  return mean_metrics(label).bleu[3];
}

std::string AblationTable::to_json() const {
  json jrows = json::array();
  for (const auto& r : rows)
    jrows.push_back(
        {{"config", r.label}, {"seed", r.seed}, {"metrics", json::parse(r.metrics.to_json())}});
  json jmeans = json::object();
  for (const auto& label : labels)
    jmeans[label] = json::parse(mean_metrics(label).to_json());
  return json{{"rows", jrows}, {"means", jmeans}}.dump(2) + "\n";
}

std::string AblationTable::to_text() const {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof(line), "%-10s %-6s %7s %7s %7s %7s %7s %7s %7s\n", "config", "seed",
                "bleu1", "bleu2", "bleu3", "bleu4", "rouge", "cider", "ce_f1");
  os << line;
  auto row = [&](const std::string& label, const std::string& seed, const MetricReport& m) {
    std::snprintf(line, sizeof(line), "%-10s %-6s %7.4f %7.4f %7.4f %7.4f %7.4f %7.4f %7.4f\n",
                  label.c_str(), seed.c_str(), m.bleu[0], m.bleu[1], m.bleu[2], m.bleu[3],
                  m.rouge_l, m.cider, m.ce.f1);
    os << line;
  };
  for (const auto& r : rows) row(r.label, std::to_string(r.seed), r.metrics);
  for (const auto& label : labels) row(label, "mean", mean_metrics(label));
  return os.str();
}

const std::vector<AblationSpec>& standard_ablations() {
  static const std::vector<AblationSpec> specs = {{"base", "base", ""},
                                                  {"wo_kemha", "wo_kemha", ""},
                                                  {"wo_gke", "wo_gke", ""},
                                                  {"wo_ske", "wo_ske", ""},
                                                  {"full", "full", ""}};
  return specs;
}

const std::vector<AblationSpec>& embedding_ablations() {
  static const std::vector<AblationSpec> specs = {{"no_kg", "base", ""},
                                                  {"transe", "full", "transe"},
                                                  {"transr", "full", "transr"},
                                                  {"rotate", "full", "rotate"}};
  return specs;
}

AblationTable run_ablation(const RunConfig& base, const RunData& data,
                           const std::vector<uint64_t>& seeds,
                           const std::vector<AblationSpec>& specs, const std::string& out_dir,
                           std::ostream* log) {
  if (seeds.empty()) throw ConfigError("ablate: need at least one seed");
  if (specs.empty()) throw ConfigError("ablate: need at least one configuration");
  AblationTable table;
  for (const auto& spec : specs) table.labels.push_back(spec.label);
  for (const auto& spec : specs) {
    for (uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.ablation = spec.flags_name;
      if (!spec.kg_model.empty()) cfg.kg_model = spec.kg_model;
      cfg.seed = seed;
      std::string run_dir;
      if (!out_dir.empty())
        run_dir = (fs::path(out_dir) / (spec.label + "_seed" + std::to_string(seed))).string();
      if (log) (*log) << "== " << spec.label << " seed " << seed << " ==\n";
      try {
        RunResult res = run_training(cfg, data, run_dir, log);
        table.rows.push_back({spec.label, seed, res.metrics});
      } catch (const NumericError& e) {
        throw NumericError("ablate: configuration '" + spec.label + "' failed: " + e.what());
      } catch (const ConfigError& e) {
        throw ConfigError("ablate: configuration '" + spec.label + "' failed: " + e.what());
      } catch (const DataError& e) {
        throw DataError("ablate: configuration '" + spec.label + "' failed: " + e.what());
      } catch (const ParseError& e) {
        throw ParseError("ablate: configuration '" + spec.label + "' failed: " + e.what());
      } catch (const std::exception& e) {
        throw ContractError("ablate: configuration '" + spec.label + "' failed: " + e.what());
      }
    }
  }
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "ablation.json", table.to_json());
    write_text(fs::path(out_dir) / "ablation.txt", table.to_text());
  }
  if (log) (*log) << table.to_text();
  return table;
}

std::string run_manifest(const std::string& command, const RunConfig& cfg,
                         const std::string& data_dir) {
  return json{{"command", command},
              {"config", json::parse(cfg.to_json())},
              {"config_hash", cfg.hash()},
              {"data", data_dir},
              {"seed", cfg.seed}}
             .dump(2) +
         "\n";
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const ParseError*>(&e)) return 3;
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const ContractError*>(&e)) return 2;
  if (dynamic_cast<const DimensionError*>(&e)) return 2;
  return 1;
}

}  // namespace kerg
