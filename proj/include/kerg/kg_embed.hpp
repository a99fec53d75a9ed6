#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kerg/checkpoint.hpp"
#include "kerg/kg.hpp"
#include "kerg/rng.hpp"
#include "kerg/tensor.hpp"

namespace kerg {

enum class KgModel { RotatE, TransE, TransR };

KgModel kg_model_from_string(const std::string& name);
std::string to_string(KgModel m);

struct KgEmbedConfig {
  KgModel model = KgModel::RotatE;
  int64_t dim = 400;  // entity embedding width; even (complex pairs for RotatE)
  int64_t epochs = 200;
  double lr = 1e-2;
  double margin = 6.0;
  int64_t negatives = 4;
  int64_t batch = 128;
  uint64_t seed = 1;
};

// Entity/relation embeddings. Entities are rows of `entity`; for RotatE the
// row is a dim/2 complex vector stored as real halves (re ‖ im) and relations
// live as phase angles, which keeps their modulus at exactly one.
struct EmbeddingTables {
  KgModel model_kind = KgModel::RotatE;
  int64_t dim = 400;
  TensorPtr entity;          // [N_e x dim]
  TensorPtr relation_phase;  // RotatE: [N_r x dim/2] radians
  TensorPtr relation_vec;    // TransE/TransR: [N_r x dim]
  TensorPtr relation_proj;   // TransR: [N_r x dim*dim], row-major matrices

  int64_t num_entities() const { return entity ? entity->rows() : 0; }
  int64_t num_relations() const;

  // Relations as dim-wide real vectors for the attention stack: RotatE rows
  // are (cos theta ‖ sin theta), translation models pass through.
  TensorPtr relation_out() const;

  std::vector<NamedParam> named_params() const;
  std::vector<TensorPtr> trainable() const;
};

EmbeddingTables init_tables(KgModel model, int64_t n_entities, int64_t n_relations, int64_t dim,
                            Rng& rng);

// Plausibility score, higher = better; 0 is the maximum.
// RotatE: -sum_c |h_c * e^{i theta_c} - t_c|; TransE: -|h + r - t|_1;
// TransR: -|h M_r + r - t M_r|_1.
double score_triplet(const EmbeddingTables& tables, const Triplet& t);

// Same scores through the autodiff tape, one row per (head, rel, tail).
TensorPtr score_batch(const EmbeddingTables& tables, const std::vector<int64_t>& heads,
                      const std::vector<int64_t>& rels, const std::vector<int64_t>& tails);

struct KgTrainStats {
  std::vector<double> epoch_loss;  // mean margin-ranking loss over the epoch's batches
  // Same loss measured on a corruption set frozen at start of training; free
  // of sampling noise, so it exposes the actual optimization trend.
  std::vector<double> eval_loss;
};

// Margin-ranking training with uniform head/tail corruption, SGD.
EmbeddingTables train_kg(const KnowledgeGraph& g, const KgEmbedConfig& config,
                         KgTrainStats* stats = nullptr);

struct LinkPredictionResult {
  double hits1 = 0.0;
  double hits10 = 0.0;
  double mrr = 0.0;
};

// Tail-corruption ranking over all entities, filtering out corruptions that
// appear in `known` (training triplets).
LinkPredictionResult link_prediction_eval(const EmbeddingTables& tables,
                                          const std::vector<Triplet>& held_out,
                                          const std::vector<Triplet>& known);

void save_tables(const EmbeddingTables& tables, const std::string& path, uint64_t seed);
EmbeddingTables load_tables(const std::string& path);

}  // namespace kerg
