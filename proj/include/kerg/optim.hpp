#pragma once

#include <cstdint>
#include <vector>

#include "kerg/tensor.hpp"

namespace kerg {

// Parameters sharing one learning rate. Decoder weights and the visual
// encoder train at different rates, hence groups.
struct AdamGroup {
  std::vector<TensorPtr> params;
  double lr = 1e-4;
};

// Adam with classic coupled L2 weight decay (decay added to the gradient
// before the moment updates). step() consumes whatever gradients backward()
// left on the parameters; callers zero them via zero_grad() between steps.
class Adam {
 public:
  explicit Adam(std::vector<AdamGroup> groups, double weight_decay = 0.0, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8);

  void zero_grad();
  void step();
  int64_t steps_taken() const { return t_; }

 private:
  struct Slot {
    TensorPtr param;
    double lr = 0.0;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  double wd_, b1_, b2_, eps_;
  int64_t t_ = 0;
};

}  // namespace kerg
