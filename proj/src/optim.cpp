#include "kerg/optim.hpp"

#include <cmath>
#include <unordered_set>

namespace kerg {

Adam::Adam(std::vector<AdamGroup> groups, double weight_decay, double beta1, double beta2,
           double eps)
    : wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(eps) {
  std::unordered_set<const Tensor*> seen;
  for (const auto& g : groups) {
    if (g.lr <= 0.0) throw ContractError("adam: learning rate must be positive");
    for (const auto& p : g.params) {
      if (!p->requires_grad) throw ContractError("adam: parameter does not require gradients");
      if (!seen.insert(p.get()).second)
        throw ContractError("adam: parameter registered in two groups");
      p->ensure_grad();
      slots_.push_back({p, g.lr, std::vector<double>(p->size(), 0.0),
                        std::vector<double>(p->size(), 0.0)});
    }
  }
}

void Adam::zero_grad() {
  for (auto& s : slots_) s.param->zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (auto& s : slots_) {
    auto& data = s.param->data;
    auto& grad = s.param->grad;
    for (size_t i = 0; i < data.size(); ++i) {
      const double g = grad[i] + wd_ * data[i];
      s.m[i] = b1_ * s.m[i] + (1.0 - b1_) * g;
      s.v[i] = b2_ * s.v[i] + (1.0 - b2_) * g * g;
      data[i] -= s.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
    }
  }
}

}  // namespace kerg
