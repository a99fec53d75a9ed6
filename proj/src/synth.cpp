#include "kerg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "kerg/metrics.hpp"

namespace kerg {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Ids 0/1/2 are reserved for the decoder's control tokens, in this order.
const std::vector<std::string> kControlTokens = {"[BOS]", "[EOS]", "[PAD]"};

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
  return s;
}

// Slot names appearing as {name} in a pattern, in order of first appearance.
std::vector<std::string> pattern_slots(const std::string& pattern) {
  std::vector<std::string> out;
  size_t pos = 0;
  while ((pos = pattern.find('{', pos)) != std::string::npos) {
    const size_t end = pattern.find('}', pos);
    if (end == std::string::npos) break;
    const auto name = pattern.substr(pos + 1, end - pos - 1);
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
    pos = end + 1;
  }
  return out;
}

std::vector<std::string> pattern_tokens(const std::string& pattern) {
  std::string bare;
  bool in_slot = false;
  for (char c : pattern) {
    if (c == '{') in_slot = true;
    else if (c == '}') { in_slot = false; bare += ' '; }
    else if (!in_slot) bare += c;
  }
  return tokenize_report(bare);
}

// Every word that template text or finding names can put into a report.
// Attributes must stay out of this set so they are reachable only through
// graph rules.
std::set<std::string> boilerplate_tokens(const WorldSpec& spec) {
  std::set<std::string> out = {"."};
  for (const auto& f : spec.findings) {
    for (const auto& tok : tokenize_report(f.name)) out.insert(tok);
    for (const auto& t : f.normal_templates)
      for (const auto& tok : pattern_tokens(t)) out.insert(tok);
    for (const auto& t : f.abnormal_templates)
      for (const auto& tok : pattern_tokens(t)) out.insert(tok);
  }
  return out;
}

std::string realize_normal(std::string pattern, const std::string& finding) {
  return replace_all(std::move(pattern), "{f}", finding);
}

std::string record_name(int64_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "rec%05lld", static_cast<long long>(i));
  return buf;
}

json spec_to_json(const WorldSpec& spec) {
  json jf = json::array();
  for (const auto& f : spec.findings)
    jf.push_back({{"name", f.name},
                  {"normal", f.normal_templates},
                  {"abnormal", f.abnormal_templates}});
  json jr = json::array();
  for (const auto& r : spec.kg_rules) jr.push_back({r.source, r.relation, r.target, r.count});
  return json{{"findings", jf},
              {"rules", jr},
              {"cooccurrence", spec.cooccurrence},
              {"healthy_rate", spec.healthy_rate},
              {"max_active", spec.max_active},
              {"feature_dim", spec.feature_dim},
              {"grid_rows", spec.grid_rows},
              {"feature_noise", spec.feature_noise},
              {"seed", spec.seed}};
}

WorldSpec spec_from_json(const json& j) {
  WorldSpec spec;
  for (const auto& jf : j.at("findings")) {
    FindingSpec f;
    f.name = jf.at("name").get<std::string>();
    f.normal_templates = jf.at("normal").get<std::vector<std::string>>();
    f.abnormal_templates = jf.at("abnormal").get<std::vector<std::string>>();
    spec.findings.push_back(std::move(f));
  }
  for (const auto& jr : j.at("rules"))
    spec.kg_rules.push_back({jr.at(0).get<std::string>(), jr.at(1).get<std::string>(),
                             jr.at(2).get<std::string>(), jr.at(3).get<int64_t>()});
  spec.cooccurrence = j.at("cooccurrence").get<std::vector<std::vector<double>>>();
  spec.healthy_rate = j.at("healthy_rate").get<double>();
  spec.max_active = j.at("max_active").get<int64_t>();
  spec.feature_dim = j.at("feature_dim").get<int64_t>();
  spec.grid_rows = j.at("grid_rows").get<int64_t>();
  spec.feature_noise = j.at("feature_noise").get<double>();
  spec.seed = j.at("seed").get<uint64_t>();
  return spec;
}

std::vector<std::string> build_vocab(const WorldSpec& spec) {
  std::set<std::string> words = boilerplate_tokens(spec);
  for (const auto& r : spec.kg_rules) words.insert(r.target);
  std::vector<std::string> vocab = kControlTokens;
  vocab.insert(vocab.end(), words.begin(), words.end());
  return vocab;
}

// finding index -> attribute tokens its rules license
std::vector<std::set<std::string>> licensed_attrs(const WorldSpec& spec) {
  std::vector<std::set<std::string>> out(spec.findings.size());
  for (const auto& r : spec.kg_rules) {
    for (int64_t f = 0; f < spec.n_findings(); ++f) {
      if (spec.findings[f].name == r.source) out[f].insert(r.target);
    }
  }
  return out;
}

std::set<std::string> all_attrs(const WorldSpec& spec) {
  std::set<std::string> out;
  for (const auto& r : spec.kg_rules) out.insert(r.target);
  return out;
}

}  // namespace

void WorldSpec::validate() const {
  if (findings.size() < 2) throw ContractError("world: need at least two findings");
  std::set<std::string> names;
  for (const auto& f : findings) {
    if (f.name.empty()) throw ContractError("world: empty finding name");
    if (!names.insert(f.name).second)
      throw ContractError("world: duplicate finding '" + f.name + "'");
    if (f.normal_templates.empty())
      throw ContractError("world: finding '" + f.name + "' has no normal template");
    for (const auto& t : f.normal_templates) {
      if (t.find("{f}") == std::string::npos)
        throw ContractError("world: normal template '" + t + "' lacks {f}");
    }
    for (const auto& t : f.abnormal_templates) {
      if (t.find("{f}") == std::string::npos)
        throw ContractError("world: abnormal template '" + t + "' lacks {f}");
      auto slots = pattern_slots(t);
      slots.erase(std::remove(slots.begin(), slots.end(), "f"), slots.end());
      if (slots.empty())
        throw ContractError("world: abnormal template '" + t + "' has no relation slot");
    }
  }
  const int64_t n_abn = n_findings() - 1;
  for (int64_t f = 0; f < n_abn; ++f) {
    if (findings[f].abnormal_templates.empty())
      throw ContractError("world: finding '" + findings[f].name + "' has no abnormal template");
    for (const auto& t : findings[f].abnormal_templates) {
      for (const auto& slot : pattern_slots(t)) {
        if (slot == "f") continue;
        bool grounded = false;
        for (const auto& r : kg_rules)
          grounded |= (r.source == findings[f].name && r.relation == slot);
        if (!grounded)
          throw ContractError("world: no rule grounds slot '" + slot + "' for '" +
                              findings[f].name + "'");
      }
    }
  }
  const auto boiler = boilerplate_tokens(*this);
  for (const auto& r : kg_rules) {
    if (!names.count(r.source) || r.source == findings.back().name)
      throw ContractError("world: rule source '" + r.source + "' is not an abnormal finding");
    if (r.relation.empty()) throw ContractError("world: rule with empty relation");
    auto toks = tokenize_report(r.target);
    if (toks.size() != 1 || toks[0] != r.target)
      throw ContractError("world: attribute '" + r.target + "' must be one clean token");
    if (boiler.count(r.target))
      throw ContractError("world: attribute '" + r.target + "' collides with template text");
    if (r.count < 1) throw ContractError("world: rule count must be positive");
  }
  if (cooccurrence.size() != static_cast<size_t>(n_abn))
    throw ContractError("world: cooccurrence must be " + std::to_string(n_abn) + " x " +
                        std::to_string(n_abn));
  for (const auto& row : cooccurrence) {
    if (row.size() != static_cast<size_t>(n_abn))
      throw ContractError("world: ragged cooccurrence matrix");
    for (double v : row)
      if (!(v >= 0.0 && v <= 1.0)) throw ContractError("world: cooccurrence odds outside [0,1]");
  }
  if (!(healthy_rate >= 0.0 && healthy_rate < 1.0))
    throw ContractError("world: healthy_rate outside [0,1)");
  if (max_active < 1 || max_active > n_abn)
    throw ContractError("world: max_active outside [1, abnormal count]");
  if (feature_dim < 4) throw ContractError("world: feature_dim below 4");
  if (grid_rows < 1) throw ContractError("world: grid_rows below 1");
  if (feature_noise < 0.0) throw ContractError("world: negative feature_noise");
}

WorldSpec WorldSpec::default_world(int64_t feature_dim, uint64_t seed) {
  const std::vector<std::string> abnormal = {
      "enlarged cardiomediastinum",
      "cardiomegaly",
      "lung lesion",
      "airspace opacity",
      "edema",
      "consolidation",
      "pneumonia",
      "atelectasis",
      "pneumothorax",
      "pleural effusion",
      "pleural other",
      "fracture",
      "support devices",
  };
  const std::vector<std::string> locations = {
      "left",        "right",        "bilateral",   "apical",        "basal",
      "upper",       "lower",        "central",     "peripheral",    "retrocardiac",
      "medial",      "lateral",      "anterior",    "posterior",     "superior",
      "inferior",    "hilar",        "perihilar",   "subpleural",    "juxtacardiac",
      "parenchymal", "interstitial", "alveolar",    "paratracheal",  "infrahilar",
      "suprahilar",  "costophrenic", "axillary",    "subcarinal",    "perifissural"};
  const std::vector<std::string> modifiers = {
      "mild",      "moderate",  "severe",     "small",       "large",
      "trace",     "extensive", "subtle",     "marked",      "chronic",
      "acute",     "focal",     "diffuse",    "patchy",      "dense",
      "faint",     "hazy",      "nodular",    "streaky",     "confluent",
      "scattered", "coarse",    "fine",       "prominent",   "widespread",
      "localized", "persistent", "recurrent", "progressive", "stable"};
  const std::vector<std::string> causes = {
      "infection",   "bleeding",     "malignancy", "trauma",     "failure",
      "inflammation", "scarring",    "overload",   "obstruction", "aspiration",
      "embolism",    "fibrosis",     "tuberculosis", "sarcoidosis", "asbestosis",
      "silicosis",   "vasculitis",   "sepsis",     "hemorrhage", "ischemia",
      "stenosis",    "thrombosis",   "carcinoma",  "lymphoma",   "metastasis",
      "abscess",     "empyema",      "granuloma",  "rupture",    "necrosis"};

  WorldSpec spec;
  spec.feature_dim = feature_dim;
  spec.seed = seed;
  for (size_t i = 0; i < abnormal.size(); ++i) {
    FindingSpec f;
    f.name = abnormal[i];
    f.normal_templates = {"no {f}", "no evidence of {f}", "the study is free of {f}"};
    f.abnormal_templates = {
        "there is {modify} {f} in the {located_at} zone suggestive of {suggestive_of}"};
    spec.findings.push_back(std::move(f));
    const auto& name = abnormal[i];
    const auto idx = static_cast<int64_t>(i);
    for (int64_t off : {0, 4, 8, 12, 15, 19, 23, 27})
      spec.kg_rules.push_back({name, "located_at", locations[(7 * idx + off) % 30]});
    for (int64_t off : {1, 5, 9, 13, 16, 20, 24, 28})
      spec.kg_rules.push_back({name, "modify", modifiers[(11 * idx + off) % 30]});
    for (int64_t off : {2, 6, 10, 14, 17, 21, 25, 29})
      spec.kg_rules.push_back({name, "suggestive_of", causes[(13 * idx + off) % 30]});
  }
  FindingSpec healthy;
  healthy.name = "no finding";
  healthy.normal_templates = {"{f}", "{f} . the heart and the lungs appear normal"};
  spec.findings.push_back(std::move(healthy));

  const auto n_abn = static_cast<int64_t>(abnormal.size());
  spec.cooccurrence.assign(n_abn, std::vector<double>(n_abn, 0.0));
  auto link = [&](int64_t a, int64_t b, double p) {
    spec.cooccurrence[a][b] = p;
    spec.cooccurrence[b][a] = p;
  };
  link(0, 1, 0.40);   // enlarged cardiomediastinum <-> cardiomegaly
  link(1, 4, 0.50);   // cardiomegaly <-> edema
  link(6, 5, 0.60);   // pneumonia <-> consolidation
  link(5, 3, 0.40);   // consolidation <-> airspace opacity
  link(2, 3, 0.30);   // lung lesion <-> airspace opacity
  link(9, 7, 0.45);   // pleural effusion <-> atelectasis
  link(8, 12, 0.50);  // pneumothorax <-> support devices
  link(11, 10, 0.30); // fracture <-> pleural other
  return spec;
}

SynthDataset generate(const WorldSpec& spec, int64_t n_records,
                      std::vector<std::vector<TensorPtr>>* feature_grids) {
  spec.validate();
  if (n_records < 50)
    throw ContractError("synth: need at least 50 records, got " + std::to_string(n_records));

  SynthDataset ds;
  ds.spec = spec;
  ds.vocab = build_vocab(spec);
  std::unordered_map<std::string, int64_t> word_id;
  for (size_t i = 0; i < ds.vocab.size(); ++i) word_id[ds.vocab[i]] = static_cast<int64_t>(i);

  const int64_t n = spec.n_findings();
  const int64_t n_abn = n - 1;
  const int64_t k = spec.grid_rows;
  const int64_t d = spec.feature_dim;

  Rng root(spec.seed);
  Rng sig_rng = root.fork(1001);
  const TensorPtr signatures = Tensor::randn({n, d}, sig_rng, 1.0, false);
  Rng off_rng = root.fork(1002);
  const TensorPtr row_offsets = Tensor::randn({k, d}, off_rng, 0.2, false);

  if (feature_grids) feature_grids->clear();

  for (int64_t i = 0; i < n_records; ++i) {
    Rng rng = root.fork(2000 + static_cast<uint64_t>(i));
    SynthRecord rec;
    rec.record.id = record_name(i);

    // Active finding set: healthy alone, or a primary plus cooccurring partners.
    std::vector<int64_t> active;
    if (rng.uniform() < spec.healthy_rate) {
      active = {spec.healthy_index()};
    } else {
      const auto primary = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n_abn)));
      active.push_back(primary);
      for (int64_t j = 0; j < n_abn && static_cast<int64_t>(active.size()) < spec.max_active;
           ++j) {
        if (j == primary) continue;
        if (rng.uniform() < spec.cooccurrence[primary][j]) active.push_back(j);
      }
      std::sort(active.begin(), active.end());
    }
    rec.findings = active;

    // Report sentences, one per active finding, each filling every relation
    // slot of its template with an attribute sampled from that finding's
    // licensed rules. The closing reassurance about an absent finding is a
    // deterministic function of the active set, so all residual report
    // entropy lives in the attribute slots.
    std::vector<std::string> sentences;
    const bool healthy = active.size() == 1 && active[0] == spec.healthy_index();
    if (healthy) {
      const auto& f = spec.findings[spec.healthy_index()];
      sentences.push_back(realize_normal(f.normal_templates[0], f.name));
    } else {
      for (int64_t a : active) {
        const auto& f = spec.findings[a];
        const auto& pattern =
            f.abnormal_templates[rng.uniform_int(f.abnormal_templates.size())];
        std::string sent = replace_all(pattern, "{f}", f.name);
        for (const auto& slot : pattern_slots(pattern)) {
          if (slot == "f") continue;
          std::vector<const TripletRow*> rules;
          for (const auto& r : spec.kg_rules)
            if (r.source == f.name && r.relation == slot) rules.push_back(&r);
          const auto& rule = *rules[rng.uniform_int(rules.size())];
          sent = replace_all(std::move(sent), "{" + slot + "}", rule.target);
        }
        sentences.push_back(std::move(sent));
      }
      std::vector<int64_t> absent;
      for (int64_t j = 0; j < n_abn; ++j)
        if (std::find(active.begin(), active.end(), j) == active.end()) absent.push_back(j);
      if (!absent.empty()) {
        const auto& f = spec.findings[absent[static_cast<size_t>(active[0]) % absent.size()]];
        const auto& t =
            f.normal_templates[static_cast<size_t>(active.back()) % f.normal_templates.size()];
        sentences.push_back(realize_normal(t, f.name));
      }
    }
    std::string text;
    for (size_t s = 0; s < sentences.size(); ++s) {
      if (s) text += " . ";
      text += sentences[s];
    }
    rec.report_text = text;
    for (const auto& tok : tokenize_report(text)) rec.record.report.push_back(word_id.at(tok));

    rec.record.labels.assign(n, 0.0);
    for (int64_t a : active) rec.record.labels[a] = 1.0 / static_cast<double>(active.size());

    // One or two noisy views of the same mean signature grid.
    const int n_views = rng.uniform() < 0.3 ? 2 : 1;
    std::vector<TensorPtr> grids;
    for (int v = 0; v < n_views; ++v) {
      auto grid = Tensor::zeros({k, d});
      for (int64_t r = 0; r < k; ++r) {
        for (int64_t c = 0; c < d; ++c) {
          double mean = 0.0;
          for (int64_t a : active) mean += signatures->at(a, c);
          mean /= static_cast<double>(active.size());
          grid->at(r, c) = mean + row_offsets->at(r, c) + rng.normal(0.0, spec.feature_noise);
        }
      }
      rec.record.views.push_back("features/" + rec.record.id + "_v" + std::to_string(v) + ".bin");
      grids.push_back(grid);
    }
    if (feature_grids) feature_grids->push_back(std::move(grids));
    ds.records.push_back(std::move(rec));
  }

  // 7:1:2 split on a seeded shuffle.
  std::vector<int64_t> order(n_records);
  std::iota(order.begin(), order.end(), 0);
  Rng shuf = root.fork(3000);
  for (int64_t i = n_records - 1; i > 0; --i) {
    const auto j = static_cast<int64_t>(shuf.uniform_int(static_cast<uint64_t>(i + 1)));
    std::swap(order[i], order[j]);
  }
  const int64_t n_train = (7 * n_records) / 10;
  const int64_t n_val = n_records / 10;
  for (int64_t i = 0; i < n_records; ++i) {
    const auto& id = ds.records[order[i]].record.id;
    if (i < n_train)
      ds.train_ids.push_back(id);
    else if (i < n_train + n_val)
      ds.val_ids.push_back(id);
    else
      ds.test_ids.push_back(id);
  }
  return ds;
}

void export_kg(const WorldSpec& spec, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ContractError("export_kg: cannot open " + path);
  for (const auto& r : spec.kg_rules)
    os << r.source << '\t' << r.relation << '\t' << r.target << '\t' << r.count << '\n';
}

void write_dataset(const WorldSpec& spec, int64_t n_records, const std::string& dir) {
  std::vector<std::vector<TensorPtr>> grids;
  SynthDataset ds = generate(spec, n_records, &grids);
  fs::create_directories(fs::path(dir) / "features");

  for (size_t i = 0; i < ds.records.size(); ++i) {
    const auto& rec = ds.records[i].record;
    for (size_t v = 0; v < rec.views.size(); ++v)
      write_feature_file((fs::path(dir) / rec.views[v]).string(), grids[i][v]);
  }

  std::ofstream rec_os(fs::path(dir) / "records.jsonl");
  if (!rec_os) throw ContractError("write_dataset: cannot open records.jsonl");
  for (const auto& sr : ds.records) {
    json j{{"id", sr.record.id},       {"views", sr.record.views},
           {"report", sr.record.report}, {"report_text", sr.report_text},
           {"labels", sr.record.labels}, {"findings", sr.findings}};
    rec_os << j.dump() << '\n';
  }

  export_kg(spec, (fs::path(dir) / "kg.tsv").string());

  std::ofstream split_os(fs::path(dir) / "splits.json");
  split_os << json{{"train", ds.train_ids}, {"val", ds.val_ids}, {"test", ds.test_ids}}.dump(2)
           << '\n';
  std::ofstream vocab_os(fs::path(dir) / "vocab.json");
  vocab_os << json{{"tokens", ds.vocab}}.dump(2) << '\n';
  std::ofstream world_os(fs::path(dir) / "world.json");
  world_os << spec_to_json(spec).dump(2) << '\n';
}

SynthDataset load_dataset(const std::string& dir) {
  auto slurp = [&](const char* name) {
    std::ifstream is(fs::path(dir) / name);
    if (!is) throw ContractError(std::string("load_dataset: cannot open ") + name);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  SynthDataset ds;
  try {
    ds.spec = spec_from_json(json::parse(slurp("world.json")));
    ds.vocab = json::parse(slurp("vocab.json")).at("tokens").get<std::vector<std::string>>();
    const json splits = json::parse(slurp("splits.json"));
    ds.train_ids = splits.at("train").get<std::vector<std::string>>();
    ds.val_ids = splits.at("val").get<std::vector<std::string>>();
    ds.test_ids = splits.at("test").get<std::vector<std::string>>();
    std::istringstream lines(slurp("records.jsonl"));
    std::string line;
    while (std::getline(lines, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      SynthRecord sr;
      sr.record.id = j.at("id").get<std::string>();
      for (const auto& v : j.at("views"))
        sr.record.views.push_back((fs::path(dir) / v.get<std::string>()).string());
      sr.record.report = j.at("report").get<std::vector<int64_t>>();
      sr.record.labels = j.at("labels").get<std::vector<double>>();
      sr.findings = j.at("findings").get<std::vector<int64_t>>();
      sr.report_text = j.at("report_text").get<std::string>();
      ds.records.push_back(std::move(sr));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("load_dataset: ") + e.what());
  }
  return ds;
}

bool audit_attributes(const SynthDataset& ds) {
  const auto licensed = licensed_attrs(ds.spec);
  const auto attrs = all_attrs(ds.spec);
  for (const auto& sr : ds.records) {
    std::set<std::string> allowed;
    for (int64_t f : sr.findings) allowed.insert(licensed[f].begin(), licensed[f].end());
    const bool healthy = sr.findings == std::vector<int64_t>{ds.spec.healthy_index()};
    bool has_licensed = false;
    for (const auto& tok : tokenize_report(sr.report_text)) {
      if (!attrs.count(tok)) continue;
      if (!allowed.count(tok)) return false;  // unlicensed attribute leaked in
      has_licensed = true;
    }
    if (healthy ? has_licensed : !has_licensed) return false;
  }
  return true;
}

PerplexityAudit bigram_fact_audit(const SynthDataset& ds) {
  std::unordered_map<std::string, const SynthRecord*> by_id;
  for (const auto& sr : ds.records) by_id[sr.record.id] = &sr;
  auto tokens_of = [](const SynthRecord& sr) {
    auto toks = tokenize_report(sr.report_text);
    toks.insert(toks.begin(), "<s>");
    toks.push_back("</s>");
    return toks;
  };

  // Add-one bigram model fit on the train split.
  std::unordered_map<std::string, int64_t> unigram;
  std::unordered_map<std::string, std::unordered_map<std::string, int64_t>> bigram;
  std::set<std::string> vocab;
  for (const auto& id : ds.train_ids) {
    const auto toks = tokens_of(*by_id.at(id));
    for (size_t i = 0; i + 1 < toks.size(); ++i) {
      ++unigram[toks[i]];
      ++bigram[toks[i]][toks[i + 1]];
      vocab.insert(toks[i]);
      vocab.insert(toks[i + 1]);
    }
  }
  const auto v_size = static_cast<double>(vocab.size());
  auto prob = [&](const std::string& prev, const std::string& next) {
    const auto u = unigram.find(prev);
    const double c1 = u == unigram.end() ? 0.0 : static_cast<double>(u->second);
    double c2 = 0.0;
    const auto b = bigram.find(prev);
    if (b != bigram.end()) {
      const auto n = b->second.find(next);
      if (n != b->second.end()) c2 = static_cast<double>(n->second);
    }
    return (c2 + 1.0) / (c1 + v_size);
  };

  const auto licensed = licensed_attrs(ds.spec);
  const auto attrs = all_attrs(ds.spec);
  double log_plain = 0.0, log_facts = 0.0;
  int64_t transitions = 0;
  for (const auto& id : ds.test_ids) {
    const auto& sr = *by_id.at(id);
    std::set<std::string> allowed;
    for (int64_t f : sr.findings) allowed.insert(licensed[f].begin(), licensed[f].end());
    const auto toks = tokens_of(sr);
    for (size_t i = 0; i + 1 < toks.size(); ++i) {
      const double p = prob(toks[i], toks[i + 1]);
      log_plain += std::log(p);
      // Fact-aware variant: drop attribute words this record's graph rules do
      // not license and renormalize the rest of the row.
      double pruned = 0.0;
      for (const auto& a : attrs)
        if (!allowed.count(a)) pruned += prob(toks[i], a);
      log_facts += std::log(p / (1.0 - pruned));
      ++transitions;
    }
  }
  if (transitions == 0) throw ContractError("bigram_fact_audit: empty test split");
  PerplexityAudit audit;
  audit.without_facts = std::exp(-log_plain / static_cast<double>(transitions));
  audit.with_facts = std::exp(-log_facts / static_cast<double>(transitions));
  return audit;
}

}  // namespace kerg
