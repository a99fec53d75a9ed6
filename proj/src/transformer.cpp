#include "kerg/transformer.hpp"

#include <cmath>

namespace kerg {

FeedForward FeedForward::init(int64_t d, int64_t hidden, Rng& rng) {
  FeedForward f;
  const double a1 = std::sqrt(6.0 / static_cast<double>(d + hidden));
  f.w1 = Tensor::uniform({d, hidden}, rng, -a1, a1);
  f.b1 = Tensor::zeros({1, hidden});
  f.b1->requires_grad = true;
  f.w2 = Tensor::uniform({hidden, d}, rng, -a1, a1);
  f.b2 = Tensor::zeros({1, d});
  f.b2->requires_grad = true;
  return f;
}

TensorPtr FeedForward::apply(const TensorPtr& x) const {
  auto ones = Tensor::full({x->cols()}, 1.0);
  auto zeros = Tensor::zeros({x->cols()});
  auto h = relu(add_row_broadcast(matmul(layer_norm(x, ones, zeros), w1), b1));
  return add_row_broadcast(matmul(h, w2), b2);
}

std::vector<NamedParam> FeedForward::named_params(const std::string& prefix) const {
  return {{prefix + ".w1", w1}, {prefix + ".b1", b1}, {prefix + ".w2", w2}, {prefix + ".b2", b2}};
}

TensorPtr sinusoidal_positions(int64_t len, int64_t d) {
  auto pe = Tensor::zeros({len, d});
  for (int64_t pos = 0; pos < len; ++pos)
    for (int64_t i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      pe->at(pos, i) = std::sin(angle);
      if (i + 1 < d) pe->at(pos, i + 1) = std::cos(angle);
    }
  return pe;
}

}  // namespace kerg
