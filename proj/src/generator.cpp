#include "kerg/generator.hpp"

#include <algorithm>
#include <cmath>

namespace kerg {

DecoderLayer DecoderLayer::init(int64_t d, int64_t heads, int64_t ffn_hidden, Rng& rng) {
  DecoderLayer l;
  l.self_att = KemhaParams::init(d, heads, /*rel_dim=*/0, rng);
  l.cross_att = KemhaParams::init(d, heads, /*rel_dim=*/0, rng);
  l.ffn = FeedForward::init(d, ffn_hidden, rng);
  return l;
}

std::vector<NamedParam> DecoderLayer::named_params(const std::string& prefix) const {
  std::vector<NamedParam> out;
  for (auto& p : self_att.named_params(prefix + ".self")) out.push_back(p);
  for (auto& p : cross_att.named_params(prefix + ".cross")) out.push_back(p);
  for (auto& p : ffn.named_params(prefix + ".ffn")) out.push_back(p);
  return out;
}

std::vector<TensorPtr> DecoderLayer::trainable() const {
  std::vector<TensorPtr> out;
  for (auto& t : self_att.trainable()) out.push_back(t);
  for (auto& t : cross_att.trainable()) out.push_back(t);
  for (auto& t : ffn.trainable()) out.push_back(t);
  return out;
}

GeneratorModel GeneratorModel::init(int64_t vocab, int64_t d, int64_t n_layers, int64_t heads,
                                    int64_t ffn_hidden, AblationFlags flags, Rng& rng,
                                    int64_t max_len) {
  if (vocab <= kFirstWordId)
    throw ContractError("generator: vocabulary must hold the control tokens plus words");
  if (n_layers < 1 || max_len < 1) throw ContractError("generator: layers and max_len positive");
  GeneratorModel m;
  m.vocab = vocab;
  m.d = d;
  m.heads = heads;
  m.max_len = max_len;
  m.flags = flags;
  m.embed = Tensor::randn({vocab, d}, rng, 0.02, true);
  for (int64_t l = 0; l < n_layers; ++l) m.layers.push_back(DecoderLayer::init(d, heads, ffn_hidden, rng));
  m.w_out = Tensor::zeros({d, vocab});
  m.w_out->requires_grad = true;
  m.b_out = Tensor::zeros({1, vocab});
  m.b_out->requires_grad = true;
  return m;
}

std::vector<NamedParam> GeneratorModel::named_params(const std::string& prefix) const {
  std::vector<NamedParam> out;
  out.push_back({prefix + ".embed", embed});
  for (size_t l = 0; l < layers.size(); ++l)
    for (auto& p : layers[l].named_params(prefix + ".layer" + std::to_string(l)))
      out.push_back(p);
  out.push_back({prefix + ".out.w", w_out});
  out.push_back({prefix + ".out.b", b_out});
  return out;
}

std::vector<TensorPtr> GeneratorModel::trainable() const {
  std::vector<TensorPtr> out{embed};
  for (auto& l : layers)
    for (auto& t : l.trainable()) out.push_back(t);
  out.push_back(w_out);
  out.push_back(b_out);
  return out;
}

TensorPtr build_memory(const TensorPtr& visual, const TensorPtr& c_g, const TensorPtr& c_s) {
  if (!visual) throw ContractError("build_memory: visual grid is required");
  std::vector<TensorPtr> parts{visual};
  if (c_g) parts.push_back(c_g);
  if (c_s) parts.push_back(c_s);
  for (const auto& p : parts)
    if (p->cols() != visual->cols())
      throw DimensionError("build_memory: context width " + std::to_string(p->cols()) +
                           " != visual width " + std::to_string(visual->cols()));
  if (parts.size() == 1) return visual;
  return concat_rows(parts);
}

namespace {

void check_prefix(const GeneratorModel& model, const std::vector<int64_t>& prefix) {
  if (prefix.empty() || prefix[0] != kBosId)
    throw ContractError("decoder: prefix must start with BOS (id 0)");
  if (static_cast<int64_t>(prefix.size()) > model.max_len)
    throw ContractError("decoder: prefix length " + std::to_string(prefix.size()) +
                        " exceeds max length " + std::to_string(model.max_len));
  for (int64_t id : prefix)
    if (id < 0 || id >= model.vocab)
      throw ContractError("decoder: token id " + std::to_string(id) + " outside vocabulary");
}

// Hidden states [n x d] for every prefix position.
TensorPtr decode_states(const GeneratorModel& model, const TensorPtr& memory,
                        const std::vector<int64_t>& prefix) {
  if (memory->cols() != model.d)
    throw DimensionError("decoder: memory width " + std::to_string(memory->cols()) +
                         " != model dim " + std::to_string(model.d));
  const auto n = static_cast<int64_t>(prefix.size());
  auto x = add(scale(gather_rows(model.embed, prefix), std::sqrt(static_cast<double>(model.d))),
               sinusoidal_positions(n, model.d));
  auto mask = causal_mask(n);
  for (const auto& layer : model.layers) {
    x = add(x, kemha(layer.self_att, x, x, x, nullptr, PoolAxis::Source, mask));
    x = add(x, kemha(layer.cross_att, x, memory, memory, nullptr));
    x = add(x, layer.ffn.apply(x));
  }
  return x;
}

}  // namespace

TensorPtr decoder_logits(const GeneratorModel& model, const TensorPtr& memory,
                         const std::vector<int64_t>& prefix) {
  check_prefix(model, prefix);
  auto x = decode_states(model, memory, prefix);
  auto ones = Tensor::full({model.d}, 1.0);
  auto zeros = Tensor::zeros({model.d});
  return add_row_broadcast(matmul(layer_norm(x, ones, zeros), model.w_out), model.b_out);
}

TensorPtr step_logits(const GeneratorModel& model, const TensorPtr& memory,
                      const std::vector<int64_t>& prefix) {
  auto all = decoder_logits(model, memory, prefix);
  const auto n = all->rows();
  return reshape(slice_rows(all, n - 1, n), {model.vocab});
}

TensorPtr sequence_nll(const GeneratorModel& model, const TensorPtr& memory,
                       const std::vector<int64_t>& tokens) {
  if (tokens.size() < 2)
    throw ContractError("sequence_nll: need BOS plus at least one target token");
  std::vector<int64_t> inputs(tokens.begin(), tokens.end() - 1);
  std::vector<int64_t> targets(tokens.begin() + 1, tokens.end());
  auto logits = decoder_logits(model, memory, inputs);
  return cross_entropy(logits, targets, kPadId);
}

void TrainConfig::validate() const {
  if (lr <= 0 || weight_decay <= 0 || encoder_lr <= 0 || epochs <= 0 || batch_size <= 0 ||
      lambda_cls <= 0)
    throw ContractError("train config: every field except seed must be positive");
}

namespace {

int64_t non_pad_targets(const std::vector<int64_t>& tokens) {
  int64_t c = 0;
  for (size_t t = 1; t < tokens.size(); ++t)
    if (tokens[t] != kPadId) ++c;
  return c;
}

}  // namespace

LossParts batch_loss(const GeneratorModel& model, const std::vector<GenExample>& batch,
                     double lambda_cls) {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  TensorPtr nll_acc;
  int64_t total_targets = 0;
  TensorPtr cls_acc;
  int64_t cls_items = 0;
  for (const auto& ex : batch) {
    const int64_t count = non_pad_targets(ex.tokens);
    auto ce = scale(sequence_nll(model, ex.memory, ex.tokens), static_cast<double>(count));
    nll_acc = nll_acc ? add(nll_acc, ce) : ce;
    total_targets += count;
    if (ex.cls_logits) {
      auto item = cross_entropy_soft(ex.cls_logits, ex.labels);
      cls_acc = cls_acc ? add(cls_acc, item) : item;
      ++cls_items;
    }
  }
  LossParts parts;
  parts.nll = scale(nll_acc, 1.0 / static_cast<double>(total_targets));
  parts.cls = cls_items > 0 ? scale(cls_acc, 1.0 / static_cast<double>(cls_items))
                            : Tensor::scalar(0.0);
  parts.total = add(parts.nll, scale(parts.cls, lambda_cls));
  return parts;
}

StepStats train_step(const GeneratorModel& model, const std::vector<GenExample>& batch,
                     const TrainConfig& cfg, Adam& opt) {
  cfg.validate();
  auto parts = batch_loss(model, batch, cfg.lambda_cls);
  StepStats stats{parts.nll->data[0], parts.cls->data[0], parts.total->data[0]};
  if (!std::isfinite(stats.total))
    throw NumericError("train_step: loss is not finite");
  opt.zero_grad();
  backward(parts.total);
  opt.step();
  return stats;
}

namespace {

std::vector<double> log_softmax_row(const std::vector<double>& z) {
  double mx = *std::max_element(z.begin(), z.end());
  double lse = 0.0;
  for (double v : z) lse += std::exp(v - mx);
  lse = mx + std::log(lse);
  std::vector<double> out(z.size());
  for (size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
  return out;
}

struct Beam {
  std::vector<int64_t> body;
  double logp = 0.0;
  bool done = false;
};

bool beam_before(const Beam& a, const Beam& b) {
  if (a.logp != b.logp) return a.logp > b.logp;
  return a.body < b.body;
}

}  // namespace

std::vector<int64_t> generate(const GeneratorModel& model, const TensorPtr& memory,
                              int64_t max_len, int64_t beam_width) {
  if (max_len < 1 || beam_width < 1)
    throw ContractError("generate: max_len and beam_width must be positive");
  std::vector<Beam> beams{Beam{}};
  while (std::any_of(beams.begin(), beams.end(), [](const Beam& b) { return !b.done; })) {
    std::vector<Beam> cands;
    for (Beam b : beams) {
      if (!b.done && (static_cast<int64_t>(b.body.size()) >= max_len ||
                      1 + static_cast<int64_t>(b.body.size()) > model.max_len))
        b.done = true;
      if (b.done) {
        cands.push_back(std::move(b));
        continue;
      }
      std::vector<int64_t> prefix{kBosId};
      prefix.insert(prefix.end(), b.body.begin(), b.body.end());
      auto logp = log_softmax_row(step_logits(model, memory, prefix)->data);
      std::vector<int64_t> ids(logp.size());
      for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int64_t>(i);
      const auto take = std::min<size_t>(beam_width, ids.size());
      std::partial_sort(ids.begin(), ids.begin() + take, ids.end(),
                        [&](int64_t i, int64_t j) {
                          if (logp[i] != logp[j]) return logp[i] > logp[j];
                          return i < j;
                        });
      for (size_t c = 0; c < take; ++c) {
        Beam nb = b;
        nb.logp += logp[ids[c]];
        if (ids[c] == kEosId)
          nb.done = true;
        else
          nb.body.push_back(ids[c]);
        cands.push_back(std::move(nb));
      }
    }
    std::sort(cands.begin(), cands.end(), beam_before);
    if (static_cast<int64_t>(cands.size()) > beam_width) cands.resize(beam_width);
    beams = std::move(cands);
  }
  std::sort(beams.begin(), beams.end(), beam_before);
  return beams.front().body;
}

}  // namespace kerg
