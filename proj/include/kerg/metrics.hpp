#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "kerg/kg.hpp"  // ParseError

namespace kerg {

// Lowercases, drops punctuation except periods (kept as their own token),
// splits on whitespace.
std::vector<std::string> tokenize_report(const std::string& text);

using TokenSeq = std::vector<std::string>;

// Corpus BLEU-n: clipped n-gram precisions, geometric mean over 1..n, brevity
// penalty. Exactly 0 when any order has no overlap.
double bleu(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references,
            int n);

// Mean LCS-based F measure (beta = 1.2) over pairs; empty sides are skipped
// with a warning on stderr.
double rouge_l(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references);

// CIDEr-D: tf-idf n-gram cosine for n = 1..4 with clipped counts, gaussian
// length penalty (sigma 6), averaged over n and scaled by 10. Document
// frequencies come from the reference side, so the corpus needs >= 2 pairs.
double cider(const std::vector<TokenSeq>& candidates, const std::vector<TokenSeq>& references);

// Rule labeler standing in for a learned one: a label fires when any of its
// trigger phrases appears without a negation cue ending within the three
// tokens before the trigger.
struct KeywordLabeler {
  std::vector<std::string> labels;                 // file order
  std::vector<std::vector<TokenSeq>> triggers;     // parallel to labels
  std::vector<TokenSeq> negation_cues;

  static KeywordLabeler from_toml(const std::string& path);
};

std::vector<uint8_t> extract_labels(const KeywordLabeler& labeler, const TokenSeq& tokens);

struct CeMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Micro-averaged label agreement between generated and reference reports.
CeMetrics clinical_efficacy(const std::vector<TokenSeq>& candidates,
                            const std::vector<TokenSeq>& references,
                            const KeywordLabeler& labeler);

struct MetricReport {
  std::array<double, 4> bleu{};  // BLEU-1..4
  double rouge_l = 0.0;
  double cider = 0.0;
  CeMetrics ce;

  std::string to_json() const;
};

MetricReport evaluate_pairs(const std::vector<TokenSeq>& candidates,
                            const std::vector<TokenSeq>& references,
                            const KeywordLabeler& labeler);

}  // namespace kerg
