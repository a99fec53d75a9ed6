#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kerg/attention.hpp"
#include "kerg/checkpoint.hpp"
#include "kerg/optim.hpp"
#include "kerg/rng.hpp"
#include "kerg/tensor.hpp"
#include "kerg/transformer.hpp"

namespace kerg {

// Report-vocabulary control tokens. Every report sequence is
// [BOS] body... [EOS] with optional [PAD] tail; corpus words start at 3.
inline constexpr int64_t kBosId = 0;
inline constexpr int64_t kEosId = 1;
inline constexpr int64_t kPadId = 2;
inline constexpr int64_t kFirstWordId = 3;

// Which knowledge paths feed the decoder memory. All false = plain
// visual-only captioning baseline.
struct AblationFlags {
  bool use_gke = true;
  bool use_ske = true;
  bool use_kemha_bias = true;
};

// One decoder block: causal self-attention, cross-attention over the memory,
// position-wise feed-forward. Residual connections around each, inputs
// normalized inside the sub-blocks.
struct DecoderLayer {
  KemhaParams self_att;
  KemhaParams cross_att;
  FeedForward ffn;

  static DecoderLayer init(int64_t d, int64_t heads, int64_t ffn_hidden, Rng& rng);
  std::vector<NamedParam> named_params(const std::string& prefix) const;
  std::vector<TensorPtr> trainable() const;
};

// Autoregressive transformer decoder over a prebuilt memory. The output
// projection starts at zero, so an untrained model scores every token
// uniformly (per-token NLL = ln vocab).
struct GeneratorModel {
  int64_t vocab = 0;
  int64_t d = 0;
  int64_t heads = 0;
  int64_t max_len = 60;
  AblationFlags flags;
  TensorPtr embed;  // [vocab x d]
  std::vector<DecoderLayer> layers;
  TensorPtr w_out;  // [d x vocab]
  TensorPtr b_out;  // [1 x vocab]

  static GeneratorModel init(int64_t vocab, int64_t d, int64_t n_layers, int64_t heads,
                             int64_t ffn_hidden, AblationFlags flags, Rng& rng,
                             int64_t max_len = 60);
  std::vector<NamedParam> named_params(const std::string& prefix = "gen") const;
  std::vector<TensorPtr> trainable() const;
};

// Rowwise concatenation of the visual grid with whichever knowledge contexts
// are present (pass nullptr for an absent path). Widths must agree.
TensorPtr build_memory(const TensorPtr& visual, const TensorPtr& c_g, const TensorPtr& c_s);

// Next-token logits at every prefix position: row t scores the token
// following prefix[0..t]. Prefix must start with BOS and fit max_len.
TensorPtr decoder_logits(const GeneratorModel& model, const TensorPtr& memory,
                         const std::vector<int64_t>& prefix);

// Logits [vocab] for the single token following the whole prefix.
TensorPtr step_logits(const GeneratorModel& model, const TensorPtr& memory,
                      const std::vector<int64_t>& prefix);

// Teacher-forced mean NLL per non-pad target over tokens = BOS body EOS PAD*.
TensorPtr sequence_nll(const GeneratorModel& model, const TensorPtr& memory,
                       const std::vector<int64_t>& tokens);

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 5e-5;
  double encoder_lr = 5e-5;
  int64_t epochs = 50;
  int64_t batch_size = 16;
  uint64_t seed = 0;
  double lambda_cls = 0.5;

  void validate() const;  // every field except seed must be positive
};

// One training example, graph-connected to any upstream trainables: the
// decoder memory, the gold token sequence, and (optionally) classifier
// logits with their gold label distribution for the auxiliary loss.
struct GenExample {
  TensorPtr memory;
  std::vector<int64_t> tokens;
  TensorPtr cls_logits;        // [1 x n_c] or nullptr
  std::vector<double> labels;  // gold distribution; paired with cls_logits
};

struct LossParts {
  TensorPtr nll;    // token-weighted mean NLL per non-pad target
  TensorPtr cls;    // mean auxiliary cross-entropy (zero scalar when unused)
  TensorPtr total;  // nll + lambda_cls * cls
};

LossParts batch_loss(const GeneratorModel& model, const std::vector<GenExample>& batch,
                     double lambda_cls);

struct StepStats {
  double nll = 0.0;
  double cls = 0.0;
  double total = 0.0;
};

// Builds the batch loss, backprops, and applies one optimizer update.
// Throws NumericError if the loss is not finite.
StepStats train_step(const GeneratorModel& model, const std::vector<GenExample>& batch,
                     const TrainConfig& cfg, Adam& opt);

// Decodes a report body (no BOS/EOS) from the memory. beam_width 1 is greedy
// argmax with ascending-id tie-break; wider beams keep the most probable
// sequences, ties broken toward lexicographically smaller token ids.
std::vector<int64_t> generate(const GeneratorModel& model, const TensorPtr& memory,
                              int64_t max_len = 60, int64_t beam_width = 1);

}  // namespace kerg
