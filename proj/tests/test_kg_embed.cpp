#include <doctest.h>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numeric>

#include "kerg/grad_check.hpp"
#include "kerg/kg_embed.hpp"

using namespace kerg;

namespace {

KnowledgeGraph chain_graph(int n) {
  std::vector<TripletRow> rows;
  for (int i = 0; i + 1 < n; ++i)
    rows.push_back({"e" + std::to_string(i), "next", "e" + std::to_string(i + 1), 1});
  return ingest(rows, 1);
}

}  // namespace

TEST_CASE("zero rotation with matching tail scores exactly zero") {
  Rng rng(1);
  auto t = init_tables(KgModel::RotatE, 2, 1, 8, rng);
  for (auto& v : t.relation_phase->data) v = 0.0;
  for (int k = 0; k < 8; ++k) t.entity->at(1, k) = t.entity->at(0, k);
  CHECK(score_triplet(t, {0, 0, 1}) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("half-turn rotation maps (1,0) onto (-1,0)") {
  Rng rng(1);
  auto t = init_tables(KgModel::RotatE, 2, 1, 2, rng);
  t.entity->at(0, 0) = 1.0;
  t.entity->at(0, 1) = 0.0;
  t.entity->at(1, 0) = -1.0;
  t.entity->at(1, 1) = 0.0;
  t.relation_phase->data[0] = 3.14159265358979323846;
  CHECK(std::abs(score_triplet(t, {0, 0, 1})) < 1e-10);
}

TEST_CASE("rotation scoring matches an independent complex-arithmetic oracle") {
  Rng rng(42);
  auto t = init_tables(KgModel::RotatE, 6, 3, 20, rng);
  Rng pick(7);
  for (int trial = 0; trial < 20; ++trial) {
    Triplet tr{static_cast<EntityId>(pick.uniform_int(6)),
               static_cast<RelationId>(pick.uniform_int(3)),
               static_cast<EntityId>(pick.uniform_int(6))};
    const int c = 10;
    double expect = 0.0;
    for (int k = 0; k < c; ++k) {
      std::complex<double> h(t.entity->at(tr.source, k), t.entity->at(tr.source, c + k));
      std::complex<double> tail(t.entity->at(tr.target, k), t.entity->at(tr.target, c + k));
      std::complex<double> r = std::polar(1.0, t.relation_phase->at(tr.relation, k));
      expect -= std::abs(h * r - tail);
    }
    CHECK(score_triplet(t, tr) == doctest::Approx(expect).epsilon(1e-10));
  }
}

TEST_CASE("rotation preserves the complex modulus of every coordinate") {
  Rng rng(5);
  auto t = init_tables(KgModel::RotatE, 3, 2, 12, rng);
  const int c = 6;
  for (int k = 0; k < c; ++k) {
    const double th = t.relation_phase->at(1, k);
    const double re = t.entity->at(2, k), im = t.entity->at(2, c + k);
    const double pre = re * std::cos(th) - im * std::sin(th);
    const double pim = re * std::sin(th) + im * std::cos(th);
    CHECK(std::hypot(pre, pim) == doctest::Approx(std::hypot(re, im)).epsilon(1e-12));
  }
}

TEST_CASE("batched tape scores agree with scalar scores for every model") {
  for (KgModel model : {KgModel::RotatE, KgModel::TransE, KgModel::TransR}) {
    Rng rng(11);
    auto t = init_tables(model, 7, 3, 8, rng);
    std::vector<int64_t> heads = {0, 3, 6, 1, 1};
    std::vector<int64_t> rels = {0, 2, 1, 1, 0};
    std::vector<int64_t> tails = {1, 4, 0, 6, 2};
    auto s = score_batch(t, heads, rels, tails);
    REQUIRE(s->size() == 5);
    for (int i = 0; i < 5; ++i) {
      Triplet tr{static_cast<EntityId>(heads[i]), static_cast<RelationId>(rels[i]),
                 static_cast<EntityId>(tails[i])};
      CHECK(s->data[i] == doctest::Approx(score_triplet(t, tr)).epsilon(1e-10));
    }
  }
}

TEST_CASE("score is equivariant under consistent entity relabeling") {
  Rng rng(9);
  auto t = init_tables(KgModel::RotatE, 5, 2, 6, rng);
  // swap entity rows 1 and 3
  auto t2 = init_tables(KgModel::RotatE, 5, 2, 6, rng);
  t2.entity->data = t.entity->data;
  t2.relation_phase->data = t.relation_phase->data;
  for (int k = 0; k < 6; ++k) std::swap(t2.entity->at(1, k), t2.entity->at(3, k));
  CHECK(score_triplet(t, {1, 0, 3}) == doctest::Approx(score_triplet(t2, {3, 0, 1})).epsilon(1e-14));
}

TEST_CASE("margin-ranking gradients pass central-difference checks for all models") {
  for (KgModel model : {KgModel::RotatE, KgModel::TransE, KgModel::TransR}) {
    CAPTURE(to_string(model));
    Rng rng(21);
    auto t = init_tables(model, 5, 2, 4, rng);
    std::vector<int64_t> heads = {0, 2, 3, 1};
    std::vector<int64_t> rels = {0, 1, 0, 1};
    std::vector<int64_t> tails = {1, 3, 4, 0};
    std::vector<int64_t> pos_of_neg = {0, 1};
    std::vector<int64_t> neg_idx = {2, 3};
    auto loss_fn = [&]() {
      auto s = reshape(score_batch(t, heads, rels, tails), {4, 1});
      auto pos = gather_rows(s, pos_of_neg);
      auto neg = gather_rows(s, neg_idx);
      return scale(sum_all(relu(add_scalar(sub(neg, pos), 2.0))), 0.5);
    };
    std::vector<std::pair<std::string, TensorPtr>> params;
    for (auto& np : t.named_params()) params.emplace_back(np.name, np.tensor);
    auto report = check_gradients(loss_fn, params);
    CAPTURE(report.worst_param);
    CHECK(report.max_rel_err < 1e-5);
  }
}

TEST_CASE("training is deterministic under a fixed seed and inert at zero epochs") {
  auto g = chain_graph(6);
  KgEmbedConfig cfg;
  cfg.dim = 8;
  cfg.epochs = 5;
  cfg.seed = 33;
  auto a = train_kg(g, cfg);
  auto b = train_kg(g, cfg);
  CHECK(a.entity->data == b.entity->data);
  CHECK(a.relation_phase->data == b.relation_phase->data);

  KgEmbedConfig zero = cfg;
  zero.epochs = 0;
  auto trained = train_kg(g, zero);
  Rng root(cfg.seed);
  Rng init_rng = root.fork(0);
  auto fresh = init_tables(cfg.model, g.num_entities(), g.num_relations(), cfg.dim, init_rng);
  CHECK(trained.entity->data == fresh.entity->data);
}

TEST_CASE("training rejects graphs that cannot be corrupted") {
  auto g = ingest({{"solo", "self", "solo", 5}}, 1);
  KgEmbedConfig cfg;
  cfg.epochs = 1;
  CHECK_THROWS_AS(train_kg(g, cfg), ContractError);
}

TEST_CASE("trained chain embeddings separate true triplets from corruptions") {
  auto g = chain_graph(10);
  KgEmbedConfig cfg;
  cfg.dim = 16;
  cfg.epochs = 200;
  cfg.lr = 0.05;
  cfg.margin = 3.0;
  cfg.seed = 4;
  KgTrainStats stats;
  auto t = train_kg(g, cfg, &stats);

  double true_mean = 0.0;
  for (const auto& tr : g.triplets) true_mean += score_triplet(t, tr);
  true_mean /= static_cast<double>(g.num_triplets());

  Rng rng(77);
  double corrupt_mean = 0.0;
  for (int i = 0; i < 100; ++i) {
    Triplet tr{static_cast<EntityId>(rng.uniform_int(10)), 0,
               static_cast<EntityId>(rng.uniform_int(10))};
    corrupt_mean += score_triplet(t, tr);
  }
  corrupt_mean /= 100.0;
  CHECK(true_mean > corrupt_mean);

  // batch-sampled loss must end below where it started
  REQUIRE(stats.epoch_loss.size() == 200);
  CHECK(stats.epoch_loss.back() <= stats.epoch_loss.front());

  // the noise-free frozen-pair loss should be close to monotone: allow at
  // most 5% of epochs to regress by more than 1% of the initial loss
  REQUIRE(stats.eval_loss.size() == 200);
  const double tol = 0.01 * stats.eval_loss.front();
  int regressions = 0;
  for (size_t i = 1; i < stats.eval_loss.size(); ++i)
    if (stats.eval_loss[i] > stats.eval_loss[i - 1] + tol) ++regressions;
  CHECK(regressions <= 10);
}

TEST_CASE("link prediction ranks a perfectly separated tail first") {
  Rng rng(1);
  auto t = init_tables(KgModel::TransE, 3, 1, 2, rng);
  t.relation_vec->data = {1.0, 0.0};
  t.entity->data = {0.0, 0.0, 1.0, 0.0, 5.0, 5.0};
  auto res = link_prediction_eval(t, {{0, 0, 1}}, {});
  CHECK(res.hits1 == 1.0);
  CHECK(res.hits10 == 1.0);
  CHECK(res.mrr == 1.0);
}

TEST_CASE("link prediction with one better candidate yields reciprocal rank one half") {
  Rng rng(1);
  auto t = init_tables(KgModel::TransE, 3, 1, 2, rng);
  t.relation_vec->data = {0.0, 0.0};
  t.entity->data = {0.0, 0.0, 1.0, 0.0, 2.0, 0.0};  // head itself beats the true tail
  auto res = link_prediction_eval(t, {{0, 0, 1}}, {});
  CHECK(res.hits1 == 0.0);
  CHECK(res.mrr == doctest::Approx(0.5));
}

TEST_CASE("untrained tables rank near the uniform baseline") {
  std::vector<TripletRow> rows;
  Rng mk(3);
  for (int i = 0; i < 200; ++i)
    rows.push_back({"n" + std::to_string(mk.uniform_int(50)), "rel",
                    "n" + std::to_string(mk.uniform_int(50)), 1});
  auto g = ingest(rows, 1);
  REQUIRE(g.num_entities() == 50);
  Rng rng(8);
  auto t = init_tables(KgModel::RotatE, 50, 1, 40, rng);
  auto res = link_prediction_eval(t, g.triplets, {});
  double h50 = 0.0;
  for (int k = 1; k <= 50; ++k) h50 += 1.0 / k;
  CHECK(std::abs(res.mrr - h50 / 50.0) < 0.05);
}

TEST_CASE("embedding tables survive a checkpoint round trip") {
  namespace fs = std::filesystem;
  for (KgModel model : {KgModel::RotatE, KgModel::TransE, KgModel::TransR}) {
    const std::string path =
        (fs::temp_directory_path() / ("kerg_tables_" + to_string(model) + ".bin")).string();
    Rng rng(6);
    auto t = init_tables(model, 4, 2, 4, rng);
    save_tables(t, path, 123);
    auto back = load_tables(path);
    CHECK(back.model_kind == model);
    CHECK(back.dim == 4);
    CHECK(back.entity->data == t.entity->data);
    if (model == KgModel::RotatE) CHECK(back.relation_phase->data == t.relation_phase->data);
    if (model == KgModel::TransR) CHECK(back.relation_proj->data == t.relation_proj->data);
    fs::remove(path);
  }
}

TEST_CASE("relation_out exposes unit-modulus rotations as real vectors") {
  Rng rng(2);
  auto t = init_tables(KgModel::RotatE, 2, 3, 10, rng);
  auto out = t.relation_out();
  REQUIRE(out->shape == Shape{3, 10});
  for (int r = 0; r < 3; ++r)
    for (int k = 0; k < 5; ++k)
      CHECK(std::hypot(out->at(r, k), out->at(r, 5 + k)) == doctest::Approx(1.0).epsilon(1e-12));

  auto te = init_tables(KgModel::TransE, 2, 3, 10, rng);
  CHECK(te.relation_out() == te.relation_vec);  // pass-through, same object
}
