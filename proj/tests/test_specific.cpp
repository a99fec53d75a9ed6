#include <doctest.h>

#include <algorithm>

#include "kerg/grad_check.hpp"
#include "kerg/specific.hpp"

using namespace kerg;

namespace {

KnowledgeGraph example_graph() {
  return ingest({{"pneumothorax", "suggestive_of", "bleeding", 1},
                 {"effusion", "located_at", "bilateral", 1},
                 {"edema", "located_at", "lower", 1}},
                1);
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char c : text) {
    if (c == ' ') {
      if (!cur.empty()) words.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

}  // namespace

TEST_CASE("entity extraction finds unigram terms in first-occurrence order") {
  Gazetteer gaz;
  gaz.terms = {"pneumothorax", "pleural", "effusion"};
  gaz.max_ngram = 1;
  auto found = extract_entities(split_words("pneumothorax or pleural effusion is seen"), gaz);
  REQUIRE(found.size() == 3);
  CHECK(found[0] == "pneumothorax");
  CHECK(found[1] == "pleural");
  CHECK(found[2] == "effusion");

  CHECK(extract_entities(split_words("completely clear lungs today"), gaz).empty());

  auto dedup = extract_entities(split_words("effusion effusion effusion"), gaz);
  REQUIRE(dedup.size() == 1);
  CHECK(dedup[0] == "effusion");
}

TEST_CASE("longer gazetteer terms win over their component words") {
  Gazetteer gaz;
  gaz.terms = {"pleural effusion", "pleural", "effusion", "pneumothorax"};
  gaz.max_ngram = 2;
  auto found = extract_entities(split_words("pneumothorax or pleural effusion is seen"), gaz);
  REQUIRE(found.size() == 2);
  CHECK(found[0] == "pneumothorax");
  CHECK(found[1] == "pleural effusion");
}

TEST_CASE("every extracted entity is a gazetteer term") {
  Gazetteer gaz;
  gaz.terms = {"edema", "left lower lobe", "opacity"};
  gaz.max_ngram = 3;
  auto found =
      extract_entities(split_words("mild edema in the left lower lobe with opacity noted"), gaz);
  for (const auto& term : found) CHECK(gaz.terms.count(term) == 1);
  CHECK(std::find(found.begin(), found.end(), "left lower lobe") != found.end());
}

TEST_CASE("gazetteer built from a graph carries every entity name") {
  auto g = example_graph();
  auto gaz = build_gazetteer(g);
  CHECK(gaz.terms.size() == static_cast<size_t>(g.num_entities()));
  CHECK(gaz.terms.count("pneumothorax") == 1);
  CHECK(gaz.max_ngram == 1);
}

TEST_CASE("fact serialization round-trips and respects the length cap") {
  auto g = example_graph();
  auto vocab = FactVocab::from_graph(g);
  CHECK(vocab.size() == 2 + g.num_entities() + g.num_relations());

  auto tokens = serialize_facts(vocab, g.triplets, 128);
  CHECK(tokens.size() == 3 * g.triplets.size() + (g.triplets.size() - 1));
  auto parsed = parse_fact_tokens(vocab, tokens);
  CHECK(parsed == g.triplets);

  // cap drops whole trailing facts: 7 tokens fit exactly two facts
  auto capped = serialize_facts(vocab, g.triplets, 7);
  CHECK(capped.size() == 7);
  CHECK(parse_fact_tokens(vocab, capped) ==
        std::vector<Triplet>(g.triplets.begin(), g.triplets.begin() + 2));

  CHECK_THROWS_AS(parse_fact_tokens(vocab, {vocab.entity_token(0), vocab.entity_token(1)}),
                  ContractError);
}

TEST_CASE("mined facts follow the worked retrieval example") {
  auto g = example_graph();
  auto gaz = build_gazetteer(g);
  auto vocab = FactVocab::from_graph(g);
  std::vector<RetrievedReport> retrieved = {
      {"rep1", split_words("pneumothorax and effusion are both seen")}};
  auto fs = mine_facts(g, retrieved, gaz, vocab);
  REQUIRE(fs.facts.size() == 2);
  // both triplets touching the mentioned entities surface
  auto has = [&](const std::string& s, const std::string& r, const std::string& t) {
    Triplet want{g.entity_id(s), g.relation_id(r), g.entity_id(t)};
    return std::find(fs.facts.begin(), fs.facts.end(), want) != fs.facts.end();
  };
  CHECK(has("pneumothorax", "suggestive_of", "bleeding"));
  CHECK(has("effusion", "located_at", "bilateral"));

  CHECK(mine_facts(g, {}, gaz, vocab).facts.empty());
  CHECK(mine_facts(g, {}, gaz, vocab).tokens.empty());

  // duplicate contributions across reports collapse
  std::vector<RetrievedReport> dup = {{"a", split_words("effusion seen")},
                                      {"b", split_words("effusion again")}};
  auto fs2 = mine_facts(g, dup, gaz, vocab);
  CHECK(fs2.facts.size() == 1);
}

TEST_CASE("facts from earlier-ranked reports come first") {
  auto g = example_graph();
  auto gaz = build_gazetteer(g);
  auto vocab = FactVocab::from_graph(g);
  std::vector<RetrievedReport> retrieved = {{"first", split_words("edema noted")},
                                            {"second", split_words("pneumothorax seen")}};
  auto fs = mine_facts(g, retrieved, gaz, vocab);
  REQUIRE(fs.facts.size() == 2);
  CHECK(g.entity_names[fs.facts[0].source] == "edema");
  CHECK(g.entity_names[fs.facts[1].source] == "pneumothorax");
}

TEST_CASE("mining is monotone in retrieval depth") {
  auto g = example_graph();
  auto gaz = build_gazetteer(g);
  auto vocab = FactVocab::from_graph(g);
  std::vector<RetrievedReport> retrieved = {{"r1", split_words("effusion seen")},
                                            {"r2", split_words("edema present")},
                                            {"r3", split_words("pneumothorax likely")}};
  std::vector<Triplet> prev;
  for (size_t depth = 1; depth <= retrieved.size(); ++depth) {
    std::vector<RetrievedReport> head(retrieved.begin(), retrieved.begin() + depth);
    auto fs = mine_facts(g, head, gaz, vocab, 1000);
    for (const auto& f : prev)
      CHECK(std::find(fs.facts.begin(), fs.facts.end(), f) != fs.facts.end());
    prev = fs.facts;
  }
}

TEST_CASE("fact encoder output has one row per token and is deterministic") {
  Rng rng(10);
  auto enc = FactEncoder::init(12, 8, 2, 2, 16, rng);
  std::vector<int64_t> tokens = {2, 7, 1, 3, 9, 4};
  auto out = enc(tokens);
  CHECK(out->shape == Shape{6, 8});
  auto again = enc(tokens);
  CHECK(out->data == again->data);

  // empty input falls back to the learned null row
  auto null_out = enc({});
  CHECK(null_out->shape == Shape{1, 8});
}

TEST_CASE("specific context stays defined for empty facts and keeps the visual row count") {
  Rng rng(4);
  auto enc = FactEncoder::init(12, 8, 1, 2, 16, rng);
  auto att = KemhaParams::init(8, 2, 8, rng);
  auto visual = Tensor::randn({3, 8}, rng, 1.0, false);
  FactSequence empty;
  auto c_s = specific_context(att, visual, enc, empty);
  CHECK(c_s->shape == Shape{3, 8});

  FactSequence one;
  one.tokens = {2, 11, 3};
  auto c_one = specific_context(att, visual, enc, one);
  CHECK(c_one->shape == Shape{3, 8});
}

TEST_CASE("gradients flow end-to-end through the fact encoder and cross attention") {
  Rng rng(12);
  auto enc = FactEncoder::init(10, 8, 1, 2, 12, rng);
  auto att = KemhaParams::init(8, 2, 8, rng);
  auto visual = Tensor::randn({2, 8}, rng, 1.0, false);
  auto direction = Tensor::randn({2, 8}, rng, 1.0, false);
  FactSequence fs;
  fs.tokens = {2, 8, 3, 1, 4, 9};
  auto loss_fn = [&]() { return sum_all(mul(specific_context(att, visual, enc, fs), direction)); };
  std::vector<std::pair<std::string, TensorPtr>> params;
  for (auto& np : enc.named_params("enc")) params.emplace_back(np.name, np.tensor);
  for (auto& np : att.named_params("att")) params.emplace_back(np.name, np.tensor);
  auto report = check_gradients(loss_fn, params, 1e-5, 40);
  CAPTURE(report.worst_param);
  CHECK(report.max_rel_err < 1e-4);
}
