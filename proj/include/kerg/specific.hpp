#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "kerg/attention.hpp"
#include "kerg/kg.hpp"
#include "kerg/transformer.hpp"

namespace kerg {

// Entity surface forms recognized in report text. Terms are lowercase and may
// span several words; max_ngram is the longest term's word count.
struct Gazetteer {
  std::set<std::string> terms;
  int64_t max_ngram = 1;
};

Gazetteer build_gazetteer(const KnowledgeGraph& g);

// Longest-match-first n-gram scan; returns matched terms in order of first
// occurrence, deduplicated.
std::vector<std::string> extract_entities(const std::vector<std::string>& words,
                                          const Gazetteer& gaz);

// Vocabulary for serialized fact sentences: [NULL], [SEP], every entity name
// as one token, then every relation name.
struct FactVocab {
  std::vector<std::string> tokens;
  int64_t num_entities = 0;

  static FactVocab from_graph(const KnowledgeGraph& g);
  int64_t size() const { return static_cast<int64_t>(tokens.size()); }
  int64_t null_id() const { return 0; }
  int64_t sep_id() const { return 1; }
  int64_t entity_token(EntityId e) const { return 2 + e; }
  int64_t relation_token(RelationId r) const { return 2 + num_entities + r; }
};

// Ordered, deduplicated mined facts plus their serialized token form
// ("source relation target [SEP] ..."), capped at l_s tokens by dropping
// whole low-priority facts.
struct FactSequence {
  std::vector<Triplet> facts;
  std::vector<int64_t> tokens;
};

std::vector<int64_t> serialize_facts(const FactVocab& vocab, const std::vector<Triplet>& facts,
                                     int64_t l_s);
std::vector<Triplet> parse_fact_tokens(const FactVocab& vocab, const std::vector<int64_t>& tokens);

struct RetrievedReport {
  std::string id;
  std::vector<std::string> words;
};

// Union of triplets reachable from entities mentioned in the retrieved
// reports, ordered by (rank of first contributing report, triplet id order).
FactSequence mine_facts(const KnowledgeGraph& g_s, const std::vector<RetrievedReport>& retrieved,
                        const Gazetteer& gaz, const FactVocab& vocab, int64_t l_s = 128);

// Trainable stand-in for a pretrained text encoder: token embeddings with
// sinusoidal positions through a small self-attention encoder stack.
struct FactEncoder {
  int64_t d = 0;
  int64_t layers = 0;
  TensorPtr embed;  // [vocab x d]
  std::vector<KemhaParams> att;
  std::vector<FeedForward> ffn;

  static FactEncoder init(int64_t vocab_size, int64_t d, int64_t layers, int64_t heads,
                          int64_t ffn_hidden, Rng& rng);
  // [len x d]; an empty token list encodes the learned null-fact row.
  TensorPtr operator()(const std::vector<int64_t>& tokens) const;
  std::vector<NamedParam> named_params(const std::string& prefix) const;
  std::vector<TensorPtr> trainable() const;
};

// C_s: visual rows attending over the encoded fact sequence, no relation bias.
TensorPtr specific_context(const KemhaParams& params, const TensorPtr& visual,
                           const FactEncoder& enc, const FactSequence& fs);

}  // namespace kerg
