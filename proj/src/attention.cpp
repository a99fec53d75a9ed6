#include "kerg/attention.hpp"

#include <cmath>

namespace kerg {

void RelationBank::rebuild_sums() {
  sum_over_sources = Tensor::zeros({entity_count, rel_dim});
  sum_over_targets = Tensor::zeros({entity_count, rel_dim});
  for (const auto& [pair, vec] : pair_embeddings) {
    const auto& [src, tgt] = pair;
    if (src < 0 || src >= entity_count || tgt < 0 || tgt >= entity_count)
      throw ContractError("relation bank: pair id out of range");
    if (static_cast<int64_t>(vec.size()) != rel_dim)
      throw ContractError("relation bank: r_ij width " + std::to_string(vec.size()) +
                          " != " + std::to_string(rel_dim));
    for (int64_t k = 0; k < rel_dim; ++k) {
      sum_over_sources->at(tgt, k) += vec[k];
      sum_over_targets->at(src, k) += vec[k];
    }
  }
}

RelationBank build_relation_bank(const KnowledgeGraph& g, const EmbeddingTables& tables) {
  if (g.num_entities() != tables.num_entities())
    throw ContractError("relation bank: graph has " + std::to_string(g.num_entities()) +
                        " entities, tables have " + std::to_string(tables.num_entities()));
  RelationBank bank;
  bank.entity_count = g.num_entities();
  bank.rel_dim = tables.dim;
  auto rel = tables.relation_out();
  for (const auto& [pair, rel_ids] : g.adjacency) {
    std::vector<double> mean(bank.rel_dim, 0.0);
    for (RelationId rid : rel_ids)
      for (int64_t k = 0; k < bank.rel_dim; ++k) mean[k] += rel->at(rid, k);
    for (double& v : mean) v /= static_cast<double>(rel_ids.size());
    bank.pair_embeddings[pair] = std::move(mean);
  }
  bank.rebuild_sums();
  return bank;
}

TensorPtr relation_bias(const RelationBank& bank, const TensorPtr& w_r, PoolAxis axis) {
  if (!bank.sum_over_sources || bank.sum_over_sources->rows() != bank.entity_count)
    throw ContractError("relation bank: sums not built; call rebuild_sums()");
  if (w_r->size() != bank.rel_dim)
    throw DimensionError("relation_bias: w_r " + shape_str(w_r->shape) + " vs rel_dim " +
                         std::to_string(bank.rel_dim));
  // mean over the pooled axis = (sum-matrix @ w_r) / N_e, one value per entity
  const auto& sums =
      axis == PoolAxis::Source ? bank.sum_over_sources : bank.sum_over_targets;
  auto w_col = w_r->shape.size() == 2 ? w_r : reshape(w_r, {bank.rel_dim, 1});
  auto pooled = scale(matmul(sums, w_col), 1.0 / static_cast<double>(bank.entity_count));
  return transpose(pooled);  // [1 x N_e]
}

TensorPtr kg_att(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                 const TensorPtr& bias, const TensorPtr& mask) {
  if (q->cols() != k->cols())
    throw DimensionError("kg_att: query width " + shape_str(q->shape) + " vs key width " +
                         shape_str(k->shape));
  if (k->rows() != v->rows())
    throw DimensionError("kg_att: key count " + shape_str(k->shape) + " vs value count " +
                         shape_str(v->shape));
  auto logits = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q->cols())));
  if (bias) logits = add_row_broadcast(logits, bias);
  if (mask) logits = add(logits, mask);
  return matmul(softmax(logits, 1), v);
}

TensorPtr causal_mask(int64_t n) {
  auto m = Tensor::zeros({n, n});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = i + 1; j < n; ++j) m->at(i, j) = -1e30;
  return m;
}

KemhaParams KemhaParams::init(int64_t d, int64_t heads, int64_t rel_dim, Rng& rng) {
  if (d % heads != 0)
    throw ContractError("kemha: model dim " + std::to_string(d) + " not divisible by " +
                        std::to_string(heads) + " heads");
  KemhaParams p;
  p.d = d;
  p.heads = heads;
  p.d_k = d / heads;
  p.rel_dim = rel_dim;
  const double a = std::sqrt(6.0 / static_cast<double>(d + p.d_k));
  for (int64_t h = 0; h < heads; ++h) {
    p.wq.push_back(Tensor::uniform({d, p.d_k}, rng, -a, a));
    p.wk.push_back(Tensor::uniform({d, p.d_k}, rng, -a, a));
    p.wv.push_back(Tensor::uniform({d, p.d_k}, rng, -a, a));
    // rel_dim = 0 builds a bias-free block (plain MHA, no dead weights).
    // The bias projection starts at zero so a fresh block scores exactly like
    // plain MHA and the bias only enters once training pulls it in.
    if (rel_dim > 0) p.wr.push_back(Tensor::leaf({rel_dim, 1}, true));
  }
  const double ao = std::sqrt(6.0 / static_cast<double>(heads * p.d_k + d));
  p.wo = Tensor::uniform({heads * p.d_k, d}, rng, -ao, ao);
  return p;
}

std::vector<NamedParam> KemhaParams::named_params(const std::string& prefix) const {
  std::vector<NamedParam> out;
  for (int64_t h = 0; h < heads; ++h) {
    const std::string hs = std::to_string(h);
    out.push_back({prefix + ".wq" + hs, wq[h]});
    out.push_back({prefix + ".wk" + hs, wk[h]});
    out.push_back({prefix + ".wv" + hs, wv[h]});
    if (h < static_cast<int64_t>(wr.size())) out.push_back({prefix + ".wr" + hs, wr[h]});
  }
  out.push_back({prefix + ".wo", wo});
  return out;
}

std::vector<TensorPtr> KemhaParams::trainable() const {
  std::vector<TensorPtr> out;
  for (int64_t h = 0; h < heads; ++h) {
    out.push_back(wq[h]);
    out.push_back(wk[h]);
    out.push_back(wv[h]);
    if (h < static_cast<int64_t>(wr.size())) out.push_back(wr[h]);
  }
  out.push_back(wo);
  return out;
}

TensorPtr kemha(const KemhaParams& params, const TensorPtr& q_in, const TensorPtr& k_in,
                const TensorPtr& v_in, const RelationBank* bank, PoolAxis axis,
                const TensorPtr& mask) {
  if (q_in->cols() != params.d || k_in->cols() != params.d || v_in->cols() != params.d)
    throw DimensionError("kemha: inputs must have width " + std::to_string(params.d));
  if (bank && bank->entity_count != k_in->rows())
    throw DimensionError("kemha: bank covers " + std::to_string(bank->entity_count) +
                         " entities but " + std::to_string(k_in->rows()) + " keys given");
  if (bank && params.wr.empty())
    throw ContractError("kemha: block was built without relation weights (rel_dim 0)");
  auto ones = Tensor::full({params.d}, 1.0);
  auto zeros = Tensor::zeros({params.d});
  auto qn = layer_norm(q_in, ones, zeros);
  auto kn = k_in == q_in ? qn : layer_norm(k_in, ones, zeros);
  auto vn = v_in == k_in ? kn : (v_in == q_in ? qn : layer_norm(v_in, ones, zeros));

  std::vector<TensorPtr> heads;
  for (int64_t h = 0; h < params.heads; ++h) {
    auto q = matmul(qn, params.wq[h]);
    auto k = matmul(kn, params.wk[h]);
    auto v = matmul(vn, params.wv[h]);
    TensorPtr bias = bank ? relation_bias(*bank, params.wr[h], axis) : nullptr;
    heads.push_back(kg_att(q, k, v, bias, mask));
  }
  return matmul(concat_cols(heads), params.wo);
}

TensorPtr general_context(const KemhaParams& params, const TensorPtr& visual,
                          const TensorPtr& entity_proj, const RelationBank* bank, PoolAxis axis) {
  return kemha(params, visual, entity_proj, entity_proj, bank, axis);
}

}  // namespace kerg
