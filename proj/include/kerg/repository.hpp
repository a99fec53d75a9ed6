#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "kerg/checkpoint.hpp"
#include "kerg/rng.hpp"
#include "kerg/tensor.hpp"

namespace kerg {

// One radiology-style record: feature views, tokenized report, gold labels.
struct Record {
  std::string id;
  std::vector<std::string> views;  // feature-file or raw-image paths
  std::vector<int64_t> report;     // token ids, includes BOS/EOS handling upstream
  std::vector<double> labels;      // empty, or a distribution over N_c classes
};

// Little-endian feature file: two int32 dims then float64 payload.
void write_feature_file(const std::string& path, const TensorPtr& t);
TensorPtr read_feature_file(const std::string& path);

enum class EncoderKind { Passthrough, Patch };

// Pluggable feature source. Passthrough serves precomputed k x d grids;
// Patch is a tiny learned linear encoder over square patches of a small
// grayscale image, for runs that start from pixels.
struct Encoder {
  EncoderKind kind = EncoderKind::Passthrough;
  int64_t image_size = 32;
  int64_t patch = 8;
  int64_t d = 64;
  TensorPtr w;  // [patch*patch x d]
  TensorPtr b;  // [1 x d]

  static Encoder passthrough();
  static Encoder patch_encoder(int64_t image_size, int64_t patch, int64_t d, Rng& rng);
  std::vector<NamedParam> named_params() const;
  std::vector<TensorPtr> trainable() const;
};

// Encodes every view and mean-pools them into one k x d grid. Differentiable
// through the patch encoder's weights.
TensorPtr encode(const Record& rec, const Encoder& enc);

// Disease-distribution head: softmax(mean-pooled features * W + b).
struct LabelHead {
  TensorPtr w;  // [d x n_c]
  TensorPtr b;  // [1 x n_c]

  static LabelHead init(int64_t d, int64_t n_c, Rng& rng);
  std::vector<NamedParam> named_params(const std::string& prefix) const;
  std::vector<TensorPtr> trainable() const { return {w, b}; }
};

TensorPtr label_logits(const LabelHead& head, const TensorPtr& feats);        // [1 x n_c]
TensorPtr label_distribution(const LabelHead& head, const TensorPtr& feats);  // [n_c]

// Similarity of two label distributions: 1 - KL(Y || Y_i) after epsilon
// smoothing and renormalization of both sides. 1.0 exactly iff Y == Y_i;
// can go negative; not symmetric.
double kl_score(const std::vector<double>& y, const std::vector<double>& y_i, double eps = 1e-8);

struct IndexEntry {
  std::string id;
  std::vector<double> y;  // label distribution of the stored record
  std::string report_path;
};

// Train-split record index used for retrieval. Immutable once built.
struct RepositoryIndex {
  std::vector<IndexEntry> entries;
};

void save_index_jsonl(const RepositoryIndex& index, const std::string& path);
RepositoryIndex load_index_jsonl(const std::string& path);

struct Retrieved {
  std::string id;
  double score = 0.0;
};

// Top-k entries by descending kl_score, ties broken by ascending id.
// exclude_id drops the query's own entry when it is present in the index.
std::vector<Retrieved> retrieve_topk(const RepositoryIndex& index, const std::vector<double>& y,
                                     int64_t k_ret, const std::string& exclude_id = "",
                                     double eps = 1e-8);

}  // namespace kerg
