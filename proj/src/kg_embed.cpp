#include "kerg/kg_embed.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace kerg {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

KgModel kg_model_from_string(const std::string& name) {
  if (name == "rotate") return KgModel::RotatE;
  if (name == "transe") return KgModel::TransE;
  if (name == "transr") return KgModel::TransR;
  throw ContractError("unknown kg model '" + name + "' (want rotate|transe|transr)");
}

std::string to_string(KgModel m) {
  switch (m) {
    case KgModel::RotatE: return "rotate";
    case KgModel::TransE: return "transe";
    case KgModel::TransR: return "transr";
  }
  return "?";
}

int64_t EmbeddingTables::num_relations() const {
  if (model_kind == KgModel::RotatE) return relation_phase ? relation_phase->rows() : 0;
  return relation_vec ? relation_vec->rows() : 0;
}

TensorPtr EmbeddingTables::relation_out() const {
  if (model_kind != KgModel::RotatE) return relation_vec;
  const int64_t nr = num_relations(), c = dim / 2;
  auto out = Tensor::leaf({nr, dim});
  for (int64_t r = 0; r < nr; ++r)
    for (int64_t k = 0; k < c; ++k) {
      const double th = relation_phase->at(r, k);
      out->at(r, k) = std::cos(th);
      out->at(r, c + k) = std::sin(th);
    }
  return out;
}

std::vector<NamedParam> EmbeddingTables::named_params() const {
  std::vector<NamedParam> out{{"kg.entity", entity}};
  switch (model_kind) {
    case KgModel::RotatE:
      out.push_back({"kg.relation_phase", relation_phase});
      break;
    case KgModel::TransE:
      out.push_back({"kg.relation_vec", relation_vec});
      break;
    case KgModel::TransR:
      out.push_back({"kg.relation_vec", relation_vec});
      out.push_back({"kg.relation_proj", relation_proj});
      break;
  }
  return out;
}

std::vector<TensorPtr> EmbeddingTables::trainable() const {
  std::vector<TensorPtr> out;
  for (const auto& p : named_params()) out.push_back(p.tensor);
  return out;
}

EmbeddingTables init_tables(KgModel model, int64_t n_entities, int64_t n_relations, int64_t dim,
                            Rng& rng) {
  if (dim % 2 != 0) throw ContractError("embedding dim must be even, got " + std::to_string(dim));
  EmbeddingTables t;
  t.model_kind = model;
  t.dim = dim;
  Rng er = rng.fork(0), rr = rng.fork(1), pr = rng.fork(2);
  t.entity = Tensor::uniform({n_entities, dim}, er, -0.5, 0.5);
  if (model == KgModel::RotatE) {
    t.relation_phase = Tensor::uniform({n_relations, dim / 2}, rr, -kPi, kPi);
  } else {
    t.relation_vec = Tensor::uniform({n_relations, dim}, rr, -0.5, 0.5);
  }
  if (model == KgModel::TransR) {
    t.relation_proj = Tensor::leaf({n_relations, dim * dim}, true);
    for (int64_t r = 0; r < n_relations; ++r)
      for (int64_t i = 0; i < dim; ++i)
        for (int64_t j = 0; j < dim; ++j)
          t.relation_proj->data[r * dim * dim + i * dim + j] =
              (i == j ? 1.0 : 0.0) + 0.01 * pr.normal();
  }
  return t;
}

double score_triplet(const EmbeddingTables& tables, const Triplet& t) {
  const int64_t dim = tables.dim;
  const double* h = &tables.entity->data[t.source * dim];
  const double* tt = &tables.entity->data[t.target * dim];
  switch (tables.model_kind) {
    case KgModel::RotatE: {
      const int64_t c = dim / 2;
      const double* th = &tables.relation_phase->data[t.relation * c];
      double dist = 0.0;
      for (int64_t k = 0; k < c; ++k) {
        const double cr = std::cos(th[k]), sr = std::sin(th[k]);
        const double pre = h[k] * cr - h[c + k] * sr;
        const double pim = h[k] * sr + h[c + k] * cr;
        dist += std::hypot(pre - tt[k], pim - tt[c + k]);
      }
      return -dist;
    }
    case KgModel::TransE: {
      const double* r = &tables.relation_vec->data[t.relation * dim];
      double dist = 0.0;
      for (int64_t k = 0; k < dim; ++k) dist += std::abs(h[k] + r[k] - tt[k]);
      return -dist;
    }
    case KgModel::TransR: {
      const double* r = &tables.relation_vec->data[t.relation * dim];
      const double* m = &tables.relation_proj->data[t.relation * dim * dim];
      using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
      Eigen::Map<const EMat> M(m, dim, dim);
      Eigen::Map<const Eigen::VectorXd> hv(h, dim), tv(tt, dim);
      Eigen::VectorXd hp = M.transpose() * hv, tp = M.transpose() * tv;
      double dist = 0.0;
      for (int64_t k = 0; k < dim; ++k) dist += std::abs(hp[k] + r[k] - tp[k]);
      return -dist;
    }
  }
  return 0.0;
}

namespace {

TensorPtr translation_distance(const TensorPtr& h_shift, const TensorPtr& t) {
  return sum_rows(abs_elem(sub(h_shift, t)));
}

}  // namespace

TensorPtr score_batch(const EmbeddingTables& tables, const std::vector<int64_t>& heads,
                      const std::vector<int64_t>& rels, const std::vector<int64_t>& tails) {
  if (heads.size() != rels.size() || heads.size() != tails.size() || heads.empty())
    throw ContractError("score_batch: id lists must be equal length and nonempty");
  const int64_t dim = tables.dim;
  const int64_t m = static_cast<int64_t>(heads.size());

  switch (tables.model_kind) {
    case KgModel::RotatE: {
      const int64_t c = dim / 2;
      auto h = gather_rows(tables.entity, heads);
      auto t = gather_rows(tables.entity, tails);
      auto th = gather_rows(tables.relation_phase, rels);
      auto h_re = slice_cols(h, 0, c), h_im = slice_cols(h, c, dim);
      auto t_re = slice_cols(t, 0, c), t_im = slice_cols(t, c, dim);
      auto r_re = cos_elem(th), r_im = sin_elem(th);
      auto d_re = sub(sub(mul(h_re, r_re), mul(h_im, r_im)), t_re);
      auto d_im = sub(add(mul(h_re, r_im), mul(h_im, r_re)), t_im);
      auto mod = sqrt_elem(add(mul(d_re, d_re), mul(d_im, d_im)));
      return scale(sum_rows(mod), -1.0);
    }
    case KgModel::TransE: {
      auto h = gather_rows(tables.entity, heads);
      auto t = gather_rows(tables.entity, tails);
      auto r = gather_rows(tables.relation_vec, rels);
      return scale(translation_distance(add(h, r), t), -1.0);
    }
    case KgModel::TransR: {
      // group rows by relation so each group shares one projection matmul
      std::vector<int64_t> order(m);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](int64_t a, int64_t b) { return rels[a] < rels[b]; });
      std::vector<TensorPtr> group_dists;
      std::vector<int64_t> grouped_pos(m);
      int64_t written = 0;
      for (int64_t s = 0; s < m;) {
        int64_t e = s;
        const int64_t rid = rels[order[s]];
        std::vector<int64_t> gh, gt;
        while (e < m && rels[order[e]] == rid) {
          gh.push_back(heads[order[e]]);
          gt.push_back(tails[order[e]]);
          grouped_pos[order[e]] = written++;
          ++e;
        }
        auto M = reshape(slice_rows(tables.relation_proj, rid, rid + 1), {dim, dim});
        auto hp = matmul(gather_rows(tables.entity, gh), M);
        auto tp = matmul(gather_rows(tables.entity, gt), M);
        auto r_row = slice_rows(tables.relation_vec, rid, rid + 1);
        group_dists.push_back(sum_rows(abs_elem(add_row_broadcast(sub(hp, tp), r_row))));
        s = e;
      }
      auto grouped = concat_rows(group_dists);  // [m x 1] in grouped order
      auto restored = gather_rows(grouped, grouped_pos);
      return scale(reshape(restored, {m}), -1.0);
    }
  }
  throw ContractError("score_batch: unreachable");
}

EmbeddingTables train_kg(const KnowledgeGraph& g, const KgEmbedConfig& config,
                         KgTrainStats* stats) {
  if (g.num_triplets() == 0) throw ContractError("train_kg: empty graph");
  if (g.num_entities() < 2)
    throw ContractError("train_kg: need at least two entities to sample corruptions");

  Rng root(config.seed);
  Rng init_rng = root.fork(0);
  Rng sample_rng = root.fork(1);
  EmbeddingTables tables =
      init_tables(config.model, g.num_entities(), g.num_relations(), config.dim, init_rng);
  auto params = tables.trainable();

  const int64_t n = g.num_triplets();
  const int64_t n_e = g.num_entities();
  std::vector<int64_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);

  // Frozen corruption pairs for noise-free per-epoch loss measurement.
  std::vector<std::pair<Triplet, Triplet>> eval_pairs;
  if (stats) {
    Rng frz = root.fork(2);
    for (const auto& t : g.triplets)
      for (int k = 0; k < 16; ++k) {
        const bool corrupt_head = frz.uniform() < 0.5;
        const int64_t victim = corrupt_head ? t.source : t.target;
        int64_t repl = victim;
        while (repl == victim) repl = frz.uniform_int(n_e);
        Triplet neg = corrupt_head
                          ? Triplet{static_cast<EntityId>(repl), t.relation, t.target}
                          : Triplet{t.source, t.relation, static_cast<EntityId>(repl)};
        eval_pairs.emplace_back(t, neg);
      }
  }
  auto frozen_loss = [&]() {
    double loss = 0.0;
    for (const auto& [pos, neg] : eval_pairs) {
      const double v = config.margin - score_triplet(tables, pos) + score_triplet(tables, neg);
      loss += v > 0.0 ? v : 0.0;
    }
    return loss / static_cast<double>(eval_pairs.size());
  };

  for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(perm[i], perm[sample_rng.uniform_int(i + 1)]);
    double epoch_loss = 0.0;
    int64_t batches = 0;
    for (int64_t b0 = 0; b0 < n; b0 += config.batch) {
      const int64_t b1 = std::min(n, b0 + config.batch);
      const int64_t bsz = b1 - b0;
      std::vector<int64_t> heads, rels, tails;  // positives then negatives
      heads.reserve(bsz * (1 + config.negatives));
      for (int64_t i = b0; i < b1; ++i) {
        const Triplet& t = g.triplets[perm[i]];
        heads.push_back(t.source);
        rels.push_back(t.relation);
        tails.push_back(t.target);
      }
      std::vector<int64_t> pos_of_neg;
      for (int64_t i = 0; i < bsz; ++i) {
        const Triplet& t = g.triplets[perm[b0 + i]];
        for (int64_t k = 0; k < config.negatives; ++k) {
          const bool corrupt_head = sample_rng.uniform() < 0.5;
          int64_t victim = corrupt_head ? t.source : t.target;
          int64_t repl = victim;
          while (repl == victim) repl = sample_rng.uniform_int(n_e);
          heads.push_back(corrupt_head ? repl : t.source);
          rels.push_back(t.relation);
          tails.push_back(corrupt_head ? t.target : repl);
          pos_of_neg.push_back(i);
        }
      }
      auto scores = reshape(score_batch(tables, heads, rels, tails),
                            {static_cast<int64_t>(heads.size()), 1});
      auto pos = gather_rows(scores, pos_of_neg);
      std::vector<int64_t> neg_idx(pos_of_neg.size());
      std::iota(neg_idx.begin(), neg_idx.end(), bsz);
      auto neg = gather_rows(scores, neg_idx);
      auto loss =
          scale(sum_all(relu(add_scalar(sub(neg, pos), config.margin))),
                1.0 / static_cast<double>(pos_of_neg.size()));
      for (auto& p : params) p->zero_grad();
      backward(loss);
      for (auto& p : params)
        for (int64_t i = 0; i < p->size(); ++i) p->data[i] -= config.lr * p->grad[i];
      epoch_loss += loss->data[0];
      ++batches;
    }
    if (stats) {
      stats->epoch_loss.push_back(epoch_loss / static_cast<double>(batches));
      stats->eval_loss.push_back(frozen_loss());
    }
  }
  return tables;
}

LinkPredictionResult link_prediction_eval(const EmbeddingTables& tables,
                                          const std::vector<Triplet>& held_out,
                                          const std::vector<Triplet>& known) {
  LinkPredictionResult res;
  if (held_out.empty()) return res;
  std::set<Triplet> known_set(known.begin(), known.end());
  const int64_t n_e = tables.num_entities();
  for (const auto& t : held_out) {
    const double s_true = score_triplet(tables, t);
    int64_t better = 0;
    for (int64_t cand = 0; cand < n_e; ++cand) {
      if (cand == t.target) continue;
      Triplet c{t.source, t.relation, static_cast<EntityId>(cand)};
      if (known_set.count(c)) continue;
      if (score_triplet(tables, c) > s_true) ++better;
    }
    const int64_t rank = 1 + better;
    if (rank <= 1) res.hits1 += 1.0;
    if (rank <= 10) res.hits10 += 1.0;
    res.mrr += 1.0 / static_cast<double>(rank);
  }
  const double n = static_cast<double>(held_out.size());
  res.hits1 /= n;
  res.hits10 /= n;
  res.mrr /= n;
  return res;
}

void save_tables(const EmbeddingTables& tables, const std::string& path, uint64_t seed) {
  save_checkpoint(path, tables.named_params(),
                  to_string(tables.model_kind) + ":dim=" + std::to_string(tables.dim), seed);
}

EmbeddingTables load_tables(const std::string& path) {
  auto info = peek_checkpoint(path);
  const auto colon = info.config_hash.find(":dim=");
  if (colon == std::string::npos)
    throw ContractError("load_tables: " + path + " is not an embedding checkpoint");
  EmbeddingTables t;
  t.model_kind = kg_model_from_string(info.config_hash.substr(0, colon));
  t.dim = std::stoll(info.config_hash.substr(colon + 5));
  for (const auto& e : info.entries) {
    if (e.name == "kg.entity") t.entity = Tensor::leaf(e.shape, true);
    if (e.name == "kg.relation_phase") t.relation_phase = Tensor::leaf(e.shape, true);
    if (e.name == "kg.relation_vec") t.relation_vec = Tensor::leaf(e.shape, true);
    if (e.name == "kg.relation_proj") t.relation_proj = Tensor::leaf(e.shape, true);
  }
  load_checkpoint(path, t.named_params());
  return t;
}

}  // namespace kerg
