#include "kerg/repository.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace kerg {

void write_feature_file(const std::string& path, const TensorPtr& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ContractError("write_feature_file: cannot open " + path);
  const int32_t rows = static_cast<int32_t>(t->rows());
  const int32_t cols = static_cast<int32_t>(t->cols());
  os.write(reinterpret_cast<const char*>(&rows), sizeof rows);
  os.write(reinterpret_cast<const char*>(&cols), sizeof cols);
  os.write(reinterpret_cast<const char*>(t->data.data()),
           static_cast<std::streamsize>(t->data.size() * sizeof(double)));
}

TensorPtr read_feature_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("read_feature_file: cannot open " + path);
  int32_t rows = 0, cols = 0;
  is.read(reinterpret_cast<char*>(&rows), sizeof rows);
  is.read(reinterpret_cast<char*>(&cols), sizeof cols);
  if (!is || rows <= 0 || cols <= 0)
    throw ContractError("read_feature_file: bad header in " + path);
  auto t = Tensor::leaf({rows, cols});
  is.read(reinterpret_cast<char*>(t->data.data()),
          static_cast<std::streamsize>(t->data.size() * sizeof(double)));
  if (!is) throw ContractError("read_feature_file: truncated payload in " + path);
  return t;
}

Encoder Encoder::passthrough() { return Encoder{}; }

Encoder Encoder::patch_encoder(int64_t image_size, int64_t patch, int64_t d, Rng& rng) {
  if (image_size % patch != 0)
    throw ContractError("patch_encoder: image size must be a multiple of the patch size");
  Encoder e;
  e.kind = EncoderKind::Patch;
  e.image_size = image_size;
  e.patch = patch;
  e.d = d;
  const double a = std::sqrt(6.0 / static_cast<double>(patch * patch + d));
  e.w = Tensor::uniform({patch * patch, d}, rng, -a, a);
  e.b = Tensor::zeros({1, d});
  e.b->requires_grad = true;
  return e;
}

std::vector<NamedParam> Encoder::named_params() const {
  if (kind == EncoderKind::Passthrough) return {};
  return {{"enc.w", w}, {"enc.b", b}};
}

std::vector<TensorPtr> Encoder::trainable() const {
  if (kind == EncoderKind::Passthrough) return {};
  return {w, b};
}

namespace {

TensorPtr encode_view(const std::string& path, const Encoder& enc) {
  auto raw = read_feature_file(path);
  if (enc.kind == EncoderKind::Passthrough) return raw;
  if (raw->rows() != enc.image_size || raw->cols() != enc.image_size)
    throw ContractError("encode: image " + shape_str(raw->shape) + " but encoder expects " +
                        std::to_string(enc.image_size) + " square");
  const int64_t p = enc.patch, per_side = enc.image_size / p;
  auto patches = Tensor::leaf({per_side * per_side, p * p});
  for (int64_t pi = 0; pi < per_side; ++pi)
    for (int64_t pj = 0; pj < per_side; ++pj)
      for (int64_t i = 0; i < p; ++i)
        for (int64_t j = 0; j < p; ++j)
          patches->at(pi * per_side + pj, i * p + j) = raw->at(pi * p + i, pj * p + j);
  return add_row_broadcast(matmul(patches, enc.w), enc.b);
}

}  // namespace

TensorPtr encode(const Record& rec, const Encoder& enc) {
  if (rec.views.empty()) throw ContractError("encode: record " + rec.id + " has no views");
  TensorPtr sum = encode_view(rec.views[0], enc);
  for (size_t v = 1; v < rec.views.size(); ++v) {
    auto next = encode_view(rec.views[v], enc);
    if (next->shape != sum->shape)
      throw ContractError("encode: view shape drift in record " + rec.id);
    sum = add(sum, next);
  }
  if (rec.views.size() == 1) return sum;
  return scale(sum, 1.0 / static_cast<double>(rec.views.size()));
}

LabelHead LabelHead::init(int64_t d, int64_t n_c, Rng& rng) {
  LabelHead h;
  const double a = std::sqrt(6.0 / static_cast<double>(d + n_c));
  h.w = Tensor::uniform({d, n_c}, rng, -a, a);
  h.b = Tensor::zeros({1, n_c});
  h.b->requires_grad = true;
  return h;
}

std::vector<NamedParam> LabelHead::named_params(const std::string& prefix) const {
  return {{prefix + ".w", w}, {prefix + ".b", b}};
}

TensorPtr label_logits(const LabelHead& head, const TensorPtr& feats) {
  return add_row_broadcast(matmul(mean_rows(feats), head.w), head.b);
}

TensorPtr label_distribution(const LabelHead& head, const TensorPtr& feats) {
  auto logits = label_logits(head, feats);
  return softmax(reshape(logits, {logits->cols()}), 0);
}

double kl_score(const std::vector<double>& y, const std::vector<double>& y_i, double eps) {
  if (y.size() != y_i.size())
    throw DimensionError("kl_score: lengths " + std::to_string(y.size()) + " vs " +
                         std::to_string(y_i.size()));
  if (y.empty()) throw DimensionError("kl_score: empty distributions");
  double zy = 0.0, zi = 0.0;
  for (size_t j = 0; j < y.size(); ++j) {
    zy += y[j] + eps;
    zi += y_i[j] + eps;
  }
  double kl = 0.0;
  for (size_t j = 0; j < y.size(); ++j) {
    const double p = (y[j] + eps) / zy;
    const double q = (y_i[j] + eps) / zi;
    kl += p * std::log(p / q);
  }
  return 1.0 - kl;
}

void save_index_jsonl(const RepositoryIndex& index, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ContractError("save_index_jsonl: cannot open " + path);
  for (const auto& e : index.entries) {
    nlohmann::json j;
    j["id"] = e.id;
    j["Y"] = e.y;
    j["report_path"] = e.report_path;
    os << j.dump() << '\n';
  }
}

RepositoryIndex load_index_jsonl(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ContractError("load_index_jsonl: cannot open " + path);
  RepositoryIndex index;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line);
    IndexEntry e;
    e.id = j.at("id").get<std::string>();
    e.y = j.at("Y").get<std::vector<double>>();
    e.report_path = j.at("report_path").get<std::string>();
    index.entries.push_back(std::move(e));
  }
  return index;
}

std::vector<Retrieved> retrieve_topk(const RepositoryIndex& index, const std::vector<double>& y,
                                     int64_t k_ret, const std::string& exclude_id, double eps) {
  if (index.entries.empty()) throw ContractError("retrieve_topk: empty index");
  std::vector<Retrieved> scored;
  scored.reserve(index.entries.size());
  for (const auto& e : index.entries) {
    if (!exclude_id.empty() && e.id == exclude_id) continue;
    scored.push_back({e.id, kl_score(y, e.y, eps)});
  }
  if (k_ret > static_cast<int64_t>(scored.size()))
    throw ContractError("retrieve_topk: k=" + std::to_string(k_ret) + " exceeds usable index size " +
                        std::to_string(scored.size()));
  std::sort(scored.begin(), scored.end(), [](const Retrieved& a, const Retrieved& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.id < b.id;
  });
  scored.resize(k_ret);
  return scored;
}

}  // namespace kerg
