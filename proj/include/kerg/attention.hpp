#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kerg/checkpoint.hpp"
#include "kerg/kg.hpp"
#include "kerg/kg_embed.hpp"
#include "kerg/rng.hpp"
#include "kerg/tensor.hpp"

namespace kerg {

// Which axis of the pairwise relation matrix gets averaged away when forming
// the per-entity attention bias. Source pooling biases keys (targets), which
// is what lines up with adding the bias to attention logits over keys.
enum class PoolAxis { Source, Target };

// Averaged relation embeddings per directed entity pair. Pairs without a
// relation are absent and read as the zero vector. Immutable once finalized;
// safe to share across threads.
struct RelationBank {
  int64_t entity_count = 0;
  int64_t rel_dim = 400;
  std::map<std::pair<EntityId, EntityId>, std::vector<double>> pair_embeddings;

  // Precomputed sums of r_ij over the pooled axis; row index is the
  // surviving entity. Rebuild after any manual edit to pair_embeddings.
  TensorPtr sum_over_sources;  // [N_e x rel_dim], row j = sum_i r_ij
  TensorPtr sum_over_targets;  // [N_e x rel_dim], row i = sum_j r_ij
  void rebuild_sums();
};

RelationBank build_relation_bank(const KnowledgeGraph& g, const EmbeddingTables& tables);

// Per-head projection weights for knowledge-enhanced multi-head attention.
struct KemhaParams {
  int64_t d = 0;
  int64_t heads = 0;
  int64_t d_k = 0;
  int64_t rel_dim = 400;
  std::vector<TensorPtr> wq, wk, wv;  // each [d x d_k]
  std::vector<TensorPtr> wr;          // each [rel_dim x 1]
  TensorPtr wo;                       // [heads*d_k x d]

  static KemhaParams init(int64_t d, int64_t heads, int64_t rel_dim, Rng& rng);
  std::vector<NamedParam> named_params(const std::string& prefix) const;
  std::vector<TensorPtr> trainable() const;
};

// Projects every stored r_ij to a scalar with w_r, arranges them as an
// N_e x N_e matrix (absent pairs = 0), and mean-pools the chosen axis away,
// giving one bias value per entity. Differentiable in w_r.
TensorPtr relation_bias(const RelationBank& bank, const TensorPtr& w_r,
                        PoolAxis axis = PoolAxis::Source);

// Scaled dot-product attention with an optional additive key bias.
// Q [m x d_k], K [n x d_k], V [n x d_v], bias [1 x n] or nullptr. An optional
// additive mask [m x n] (large negative = blocked) applies after the bias.
TensorPtr kg_att(const TensorPtr& q, const TensorPtr& k, const TensorPtr& v,
                 const TensorPtr& bias, const TensorPtr& mask = nullptr);

// Multi-head attention whose logits carry per-head relation biases. Inputs
// are layer-normalized (unit gain, zero bias) before projection. Passing
// bank = nullptr zeroes every head's bias, which reduces to plain MHA.
TensorPtr kemha(const KemhaParams& params, const TensorPtr& q_in, const TensorPtr& k_in,
                const TensorPtr& v_in, const RelationBank* bank,
                PoolAxis axis = PoolAxis::Source, const TensorPtr& mask = nullptr);

// Lower-triangular additive mask: 0 on and below the diagonal, -1e30 above.
// exp(-1e30 + finite) underflows to exactly zero, so blocked positions carry
// no weight at all.
TensorPtr causal_mask(int64_t n);

// Knowledge context for visual features I [k x d] attending over projected
// entity embeddings E_e [N_e x d].
TensorPtr general_context(const KemhaParams& params, const TensorPtr& visual,
                          const TensorPtr& entity_proj, const RelationBank* bank,
                          PoolAxis axis = PoolAxis::Source);

}  // namespace kerg
