#include "kerg/specific.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace kerg {

namespace {

int64_t word_count(const std::string& term) {
  return 1 + static_cast<int64_t>(std::count(term.begin(), term.end(), ' '));
}

}  // namespace

Gazetteer build_gazetteer(const KnowledgeGraph& g) {
  Gazetteer gaz;
  for (const auto& name : g.entity_names) {
    gaz.terms.insert(name);
    gaz.max_ngram = std::max(gaz.max_ngram, word_count(name));
  }
  return gaz;
}

std::vector<std::string> extract_entities(const std::vector<std::string>& words,
                                          const Gazetteer& gaz) {
  std::vector<std::string> found;
  std::set<std::string> seen;
  size_t i = 0;
  while (i < words.size()) {
    size_t matched = 0;
    for (int64_t n = std::min<int64_t>(gaz.max_ngram, words.size() - i); n >= 1; --n) {
      std::string gram = words[i];
      for (int64_t k = 1; k < n; ++k) gram += " " + words[i + k];
      if (gaz.terms.count(gram)) {
        if (seen.insert(gram).second) found.push_back(gram);
        matched = static_cast<size_t>(n);
        break;
      }
    }
    i += matched ? matched : 1;
  }
  return found;
}

FactVocab FactVocab::from_graph(const KnowledgeGraph& g) {
  FactVocab v;
  v.num_entities = g.num_entities();
  v.tokens.reserve(2 + g.num_entities() + g.num_relations());
  v.tokens.push_back("[NULL]");
  v.tokens.push_back("[SEP]");
  for (const auto& e : g.entity_names) v.tokens.push_back(e);
  for (const auto& r : g.relation_names) v.tokens.push_back(r);
  return v;
}

std::vector<int64_t> serialize_facts(const FactVocab& vocab, const std::vector<Triplet>& facts,
                                     int64_t l_s) {
  std::vector<int64_t> out;
  for (const auto& f : facts) {
    const int64_t cost = out.empty() ? 3 : 4;  // [SEP] before every fact after the first
    if (static_cast<int64_t>(out.size()) + cost > l_s) break;
    if (!out.empty()) out.push_back(vocab.sep_id());
    out.push_back(vocab.entity_token(f.source));
    out.push_back(vocab.relation_token(f.relation));
    out.push_back(vocab.entity_token(f.target));
  }
  return out;
}

std::vector<Triplet> parse_fact_tokens(const FactVocab& vocab, const std::vector<int64_t>& tokens) {
  std::vector<Triplet> facts;
  size_t i = 0;
  while (i < tokens.size()) {
    if (tokens[i] == vocab.sep_id()) {
      ++i;
      continue;
    }
    if (i + 2 >= tokens.size())
      throw ContractError("parse_fact_tokens: dangling fact fragment at position " +
                          std::to_string(i));
    const int64_t s = tokens[i] - 2;
    const int64_t r = tokens[i + 1] - 2 - vocab.num_entities;
    const int64_t t = tokens[i + 2] - 2;
    if (s < 0 || s >= vocab.num_entities || t < 0 || t >= vocab.num_entities || r < 0 ||
        r >= vocab.size() - 2 - vocab.num_entities)
      throw ContractError("parse_fact_tokens: malformed fact at position " + std::to_string(i));
    facts.push_back({static_cast<EntityId>(s), static_cast<RelationId>(r),
                     static_cast<EntityId>(t)});
    i += 3;
  }
  return facts;
}

FactSequence mine_facts(const KnowledgeGraph& g_s, const std::vector<RetrievedReport>& retrieved,
                        const Gazetteer& gaz, const FactVocab& vocab, int64_t l_s) {
  std::map<Triplet, size_t> first_rank;
  for (size_t rank = 0; rank < retrieved.size(); ++rank) {
    auto terms = extract_entities(retrieved[rank].words, gaz);
    std::set<std::string> term_set(terms.begin(), terms.end());
    for (const auto& t : lookup_by_entity(g_s, term_set))
      first_rank.emplace(t, rank);  // keeps the earliest rank
  }
  FactSequence fs;
  for (const auto& [t, rank] : first_rank) fs.facts.push_back(t);
  std::sort(fs.facts.begin(), fs.facts.end(), [&](const Triplet& a, const Triplet& b) {
    if (first_rank[a] != first_rank[b]) return first_rank[a] < first_rank[b];
    return a < b;
  });
  fs.tokens = serialize_facts(vocab, fs.facts, l_s);
  return fs;
}

FactEncoder FactEncoder::init(int64_t vocab_size, int64_t d, int64_t layers, int64_t heads,
                              int64_t ffn_hidden, Rng& rng) {
  FactEncoder enc;
  enc.d = d;
  enc.layers = layers;
  enc.embed = Tensor::randn({vocab_size, d}, rng, 0.02);
  for (int64_t l = 0; l < layers; ++l) {
    enc.att.push_back(KemhaParams::init(d, heads, /*rel_dim=*/0, rng));
    enc.ffn.push_back(FeedForward::init(d, ffn_hidden, rng));
  }
  return enc;
}

TensorPtr FactEncoder::operator()(const std::vector<int64_t>& tokens) const {
  const std::vector<int64_t> ids = tokens.empty() ? std::vector<int64_t>{0} : tokens;
  auto x = gather_rows(embed, ids);
  x = add(x, sinusoidal_positions(static_cast<int64_t>(ids.size()), d));
  for (int64_t l = 0; l < layers; ++l) {
    x = add(x, kemha(att[l], x, x, x, nullptr));
    x = add(x, ffn[l].apply(x));
  }
  return x;
}

std::vector<NamedParam> FactEncoder::named_params(const std::string& prefix) const {
  std::vector<NamedParam> out{{prefix + ".embed", embed}};
  for (int64_t l = 0; l < layers; ++l) {
    const std::string ls = prefix + ".l" + std::to_string(l);
    for (auto& np : att[l].named_params(ls + ".att")) out.push_back(np);
    for (auto& np : ffn[l].named_params(ls + ".ffn")) out.push_back(np);
  }
  return out;
}

std::vector<TensorPtr> FactEncoder::trainable() const {
  std::vector<TensorPtr> out;
  for (const auto& np : named_params("x")) out.push_back(np.tensor);
  return out;
}

TensorPtr specific_context(const KemhaParams& params, const TensorPtr& visual,
                           const FactEncoder& enc, const FactSequence& fs) {
  auto e_s = enc(fs.tokens);
  return kemha(params, visual, e_s, e_s, nullptr);
}

}  // namespace kerg
