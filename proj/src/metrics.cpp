#include "kerg/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace kerg {

std::vector<std::string> tokenize_report(const std::string& text) {
  std::string clean;
  clean.reserve(text.size() + 8);
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      clean += static_cast<char>(std::tolower(c));
    } else if (c == '.') {
      clean += " . ";
    } else {
      clean += ' ';
    }
  }
  std::vector<std::string> out;
  std::istringstream in(clean);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

namespace {

using Counts = std::unordered_map<std::string, int64_t>;

// n-gram key: tokens joined with an unprintable separator
Counts ngram_counts(const TokenSeq& toks, int n) {
  Counts c;
  if (static_cast<int>(toks.size()) < n) return c;
  for (size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key = toks[i];
    for (int j = 1; j < n; ++j) {
      key += '\x1f';
      key += toks[i + j];
    }
    ++c[key];
  }
  return c;
}

void check_corpus(const std::vector<TokenSeq>& candidates,
                  const std::vector<TokenSeq>& references) {
  if (candidates.empty()) throw ContractError("metrics: empty corpus");
  if (candidates.size() != references.size())
    throw ContractError("metrics: " + std::to_string(candidates.size()) + " candidates vs " +
                        std::to_string(references.size()) + " references");
}

}  // namespace

double bleu(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references,
            int n) {
  check_corpus(candidates, references);
  if (n < 1 || n > 4) throw ContractError("bleu: order must be in 1..4");
  std::vector<int64_t> clipped(n, 0), total(n, 0);
  int64_t cand_len = 0, ref_len = 0;
  for (size_t p = 0; p < candidates.size(); ++p) {
    cand_len += static_cast<int64_t>(candidates[p].size());
    ref_len += static_cast<int64_t>(references[p].size());
    for (int i = 1; i <= n; ++i) {
      auto cc = ngram_counts(candidates[p], i);
      auto rc = ngram_counts(references[p], i);
      for (const auto& [g, cnt] : cc) {
        auto it = rc.find(g);
        if (it != rc.end()) clipped[i - 1] += std::min(cnt, it->second);
        total[i - 1] += cnt;
      }
    }
  }
  double log_prec = 0.0;
  for (int i = 0; i < n; ++i) {
    if (clipped[i] == 0 || total[i] == 0) return 0.0;
    log_prec += std::log(static_cast<double>(clipped[i]) / static_cast<double>(total[i]));
  }
  if (cand_len == 0) return 0.0;
  const double bp =
      cand_len >= ref_len
          ? 1.0
          : std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len));
  return bp * std::exp(log_prec / static_cast<double>(n));
}

namespace {

int64_t lcs_length(const TokenSeq& a, const TokenSeq& b) {
  std::vector<int64_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (size_t i = 1; i <= a.size(); ++i) {
    for (size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge_l(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references) {
  check_corpus(candidates, references);
  constexpr double kBeta = 1.2;
  double sum = 0.0;
  int64_t used = 0;
  for (size_t p = 0; p < candidates.size(); ++p) {
    if (candidates[p].empty() || references[p].empty()) {
      std::fprintf(stderr, "rouge_l: skipping empty pair %zu\n", p);
      continue;
    }
    const auto lcs = static_cast<double>(lcs_length(candidates[p], references[p]));
    const double prec = lcs / static_cast<double>(candidates[p].size());
    const double rec = lcs / static_cast<double>(references[p].size());
    if (prec > 0.0 && rec > 0.0)
      sum += (1.0 + kBeta * kBeta) * prec * rec / (rec + kBeta * kBeta * prec);
    ++used;
  }
  if (used == 0) throw ContractError("rouge_l: no scorable pairs");
  return sum / static_cast<double>(used);
}

namespace {

constexpr int kCiderN = 4;
constexpr double kCiderSigma = 6.0;

struct TfIdfVec {
  std::array<Counts, kCiderN> tf;          // raw counts per order
  std::array<double, kCiderN> norm{};      // L2 norms of tf*idf
  int64_t length = 0;
};

TfIdfVec make_vec(const TokenSeq& toks) {
  TfIdfVec v;
  for (int i = 0; i < kCiderN; ++i) v.tf[i] = ngram_counts(toks, i + 1);
  v.length = static_cast<int64_t>(toks.size());
  return v;
}

}  // namespace

double cider(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references) {
  check_corpus(candidates, references);
  if (candidates.size() < 2)
    throw ContractError("cider: document frequencies need at least 2 pairs");
  // document frequency over reference "documents", one per pair
  std::array<Counts, kCiderN> df;
  for (const auto& ref : references)
    for (int i = 0; i < kCiderN; ++i)
      for (const auto& [g, cnt] : ngram_counts(ref, i + 1)) ++df[i][g];
  const double log_corpus = std::log(static_cast<double>(references.size()));
  auto idf = [&](int order, const std::string& g) {
    auto it = df[order].find(g);
    const double d = it == df[order].end() ? 0.0 : static_cast<double>(it->second);
    return log_corpus - std::log(std::max(1.0, d));
  };
  auto weighted = [&](TfIdfVec& v) {
    for (int i = 0; i < kCiderN; ++i) {
      double sq = 0.0;
      for (const auto& [g, cnt] : v.tf[i]) {
        const double w = static_cast<double>(cnt) * idf(i, g);
        sq += w * w;
      }
      v.norm[i] = std::sqrt(sq);
    }
  };

  double total = 0.0;
  for (size_t p = 0; p < candidates.size(); ++p) {
    auto hyp = make_vec(candidates[p]);
    auto ref = make_vec(references[p]);
    weighted(hyp);
    weighted(ref);
    const double delta = static_cast<double>(hyp.length - ref.length);
    const double penalty = std::exp(-delta * delta / (2.0 * kCiderSigma * kCiderSigma));
    double score = 0.0;
    for (int i = 0; i < kCiderN; ++i) {
      double dot = 0.0;
      for (const auto& [g, cnt] : hyp.tf[i]) {
        auto it = ref.tf[i].find(g);
        if (it == ref.tf[i].end()) continue;
        const double w = idf(i, g);
        // CIDEr-D clips the candidate count at the reference count
        dot += std::min(static_cast<double>(cnt), static_cast<double>(it->second)) * w *
               static_cast<double>(it->second) * w;
      }
      if (hyp.norm[i] > 0.0 && ref.norm[i] > 0.0)
        score += dot / (hyp.norm[i] * ref.norm[i]) * penalty;
    }
    total += score / static_cast<double>(kCiderN) * 10.0;
  }
  return total / static_cast<double>(candidates.size());
}

namespace {

// all start positions where phrase occurs as consecutive tokens
std::vector<size_t> phrase_positions(const TokenSeq& tokens, const TokenSeq& phrase) {
  std::vector<size_t> out;
  if (phrase.empty() || tokens.size() < phrase.size()) return out;
  for (size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
    bool hit = true;
    for (size_t j = 0; j < phrase.size(); ++j)
      if (tokens[i + j] != phrase[j]) {
        hit = false;
        break;
      }
    if (hit) out.push_back(i);
  }
  return out;
}

}  // namespace

std::vector<uint8_t> extract_labels(const KeywordLabeler& labeler, const TokenSeq& tokens) {
  // end positions of every negation cue occurrence
  std::vector<size_t> cue_ends;
  for (const auto& cue : labeler.negation_cues)
    for (size_t s : phrase_positions(tokens, cue)) cue_ends.push_back(s + cue.size());
  std::vector<uint8_t> out(labeler.labels.size(), 0);
  for (size_t l = 0; l < labeler.labels.size(); ++l) {
    for (const auto& trig : labeler.triggers[l]) {
      for (size_t s : phrase_positions(tokens, trig)) {
        bool negated = false;
        for (size_t e : cue_ends)
          if (e <= s && s - e <= 3) {
            negated = true;
            break;
          }
        if (!negated) {
          out[l] = 1;
          break;
        }
      }
      if (out[l]) break;
    }
  }
  return out;
}

CeMetrics clinical_efficacy(const std::vector<TokenSeq>& candidates,
                            const std::vector<TokenSeq>& references,
                            const KeywordLabeler& labeler) {
  check_corpus(candidates, references);
  int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (size_t p = 0; p < candidates.size(); ++p) {
    auto cl = extract_labels(labeler, candidates[p]);
    auto rl = extract_labels(labeler, references[p]);
    for (size_t l = 0; l < cl.size(); ++l) {
      if (cl[l] && rl[l])
        ++tp;
      else if (cl[l] && !rl[l])
        ++fp;
      else if (!cl[l] && rl[l])
        ++fn;
      else
        ++tn;
    }
  }
  CeMetrics m;
  const auto cells = static_cast<double>(tp + fp + fn + tn);
  m.accuracy = cells > 0 ? static_cast<double>(tp + tn) / cells : 1.0;
  if (tp + fp + fn == 0) {
    // perfect agreement with no positive labels anywhere
    m.precision = m.recall = m.f1 = 1.0;
    return m;
  }
  m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.f1 = m.precision + m.recall > 0
             ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
             : 0.0;
  return m;
}

namespace {

std::string strip(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

// parses a double-quoted string starting at i, returns value and advances i
std::string parse_quoted(const std::string& s, size_t& i, int line_no) {
  if (i >= s.size() || s[i] != '"')
    throw ParseError("labels toml:" + std::to_string(line_no) + ": expected opening quote");
  std::string out;
  for (++i; i < s.size(); ++i) {
    if (s[i] == '"') {
      ++i;
      return out;
    }
    if (s[i] == '\\' && i + 1 < s.size()) ++i;
    out += s[i];
  }
  throw ParseError("labels toml:" + std::to_string(line_no) + ": unterminated string");
}

std::vector<std::string> parse_string_array(const std::string& rhs, int line_no) {
  std::vector<std::string> out;
  size_t i = 0;
  auto skip_ws = [&] {
    while (i < rhs.size() && (rhs[i] == ' ' || rhs[i] == '\t')) ++i;
  };
  skip_ws();
  if (i >= rhs.size() || rhs[i] != '[')
    throw ParseError("labels toml:" + std::to_string(line_no) + ": expected array");
  ++i;
  while (true) {
    skip_ws();
    if (i < rhs.size() && rhs[i] == ']') return out;
    out.push_back(parse_quoted(rhs, i, line_no));
    skip_ws();
    if (i < rhs.size() && rhs[i] == ',') {
      ++i;
      continue;
    }
    if (i < rhs.size() && rhs[i] == ']') return out;
    throw ParseError("labels toml:" + std::to_string(line_no) + ": expected ',' or ']'");
  }
}

}  // namespace

KeywordLabeler KeywordLabeler::from_toml(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("labels toml: cannot open " + path);
  KeywordLabeler lab;
  std::string line, section, current_label;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = strip(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParseError("labels toml:" + std::to_string(line_no) + ": malformed section");
      std::string name = strip(line.substr(1, line.size() - 2));
      if (name == "negation") {
        section = "negation";
      } else if (name.rfind("labels.", 0) == 0) {
        section = "label";
        std::string tail = name.substr(7);
        if (!tail.empty() && tail.front() == '"') {
          size_t i = 0;
          tail = parse_quoted(tail, i, line_no);
        }
        if (tail.empty())
          throw ParseError("labels toml:" + std::to_string(line_no) + ": empty label name");
        current_label = tail;
        lab.labels.push_back(current_label);
        lab.triggers.emplace_back();
      } else {
        throw ParseError("labels toml:" + std::to_string(line_no) + ": unknown section " + name);
      }
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("labels toml:" + std::to_string(line_no) + ": expected key = value");
    std::string key = strip(line.substr(0, eq));
    std::string rhs = strip(line.substr(eq + 1));
    auto phrases = parse_string_array(rhs, line_no);
    if (section == "negation" && key == "cues") {
      for (const auto& p : phrases) lab.negation_cues.push_back(tokenize_report(p));
    } else if (section == "label" && key == "triggers") {
      for (const auto& p : phrases) lab.triggers.back().push_back(tokenize_report(p));
    } else {
      throw ParseError("labels toml:" + std::to_string(line_no) + ": unknown key " + key);
    }
  }
  if (lab.labels.empty()) throw ParseError("labels toml: no labels defined in " + path);
  for (size_t l = 0; l < lab.labels.size(); ++l)
    if (lab.triggers[l].empty())
      throw ParseError("labels toml: label '" + lab.labels[l] + "' has no triggers");
  return lab;
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["bleu_1"] = bleu[0];
  j["bleu_2"] = bleu[1];
  j["bleu_3"] = bleu[2];
  j["bleu_4"] = bleu[3];
  j["rouge_l"] = rouge_l;
  j["cider"] = cider;
  j["ce_accuracy"] = ce.accuracy;
  j["ce_precision"] = ce.precision;
  j["ce_recall"] = ce.recall;
  j["ce_f1"] = ce.f1;
  return j.dump(2);
}

MetricReport evaluate_pairs(const std::vector<TokenSeq>& candidates,
                            const std::vector<TokenSeq>& references,
                            const KeywordLabeler& labeler) {
  MetricReport r;
  for (int n = 1; n <= 4; ++n) r.bleu[static_cast<size_t>(n - 1)] = bleu(candidates, references, n);
  r.rouge_l = kerg::rouge_l(candidates, references);
  r.cider = kerg::cider(candidates, references);
  r.ce = clinical_efficacy(candidates, references, labeler);
  return r;
}

}  // namespace kerg
