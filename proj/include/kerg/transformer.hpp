#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kerg/attention.hpp"
#include "kerg/checkpoint.hpp"
#include "kerg/rng.hpp"
#include "kerg/tensor.hpp"

namespace kerg {

// Position-wise feed-forward block. apply() normalizes its input (unit gain,
// zero bias, matching the attention blocks) before the two projections.
struct FeedForward {
  TensorPtr w1;  // [d x hidden]
  TensorPtr b1;  // [1 x hidden]
  TensorPtr w2;  // [hidden x d]
  TensorPtr b2;  // [1 x d]

  static FeedForward init(int64_t d, int64_t hidden, Rng& rng);
  TensorPtr apply(const TensorPtr& x) const;
  std::vector<NamedParam> named_params(const std::string& prefix) const;
  std::vector<TensorPtr> trainable() const { return {w1, b1, w2, b2}; }
};

// Sinusoidal position encoding rows [len x d], constant (not trained).
TensorPtr sinusoidal_positions(int64_t len, int64_t d);

}  // namespace kerg
