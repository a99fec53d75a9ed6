#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "kerg/tensor.hpp"

namespace kerg {

// Result of comparing reverse-mode gradients against central differences.
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  int64_t entries_checked = 0;
};

// Recomputes the scalar loss with each checked parameter entry nudged by
// +/-step and compares the resulting central difference against the gradient
// produced by backward(). `loss_fn` must rebuild the graph from the current
// parameter values on every call. With max_checks_per_param > 0 a
// deterministic subsample of entries is checked instead of every entry.
//
// Relative error per entry is |a - n| / max(|a|, |n|), treated as 0 when the
// absolute gap is below abs_floor (both effectively zero).
GradCheckReport check_gradients(const std::function<TensorPtr()>& loss_fn,
                                const std::vector<std::pair<std::string, TensorPtr>>& params,
                                double step = 1e-5, int64_t max_checks_per_param = 0,
                                uint64_t subsample_seed = 17, double abs_floor = 1e-8);

}  // namespace kerg
