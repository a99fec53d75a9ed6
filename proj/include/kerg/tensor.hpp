// Dense double-precision tensors with reverse-mode differentiation.
// Nodes form a DAG; backward() walks it in reverse topological order and
// accumulates into leaf gradients, leaving all value buffers untouched.
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "kerg/rng.hpp"

namespace kerg {

using Shape = std::vector<int64_t>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& m) : std::runtime_error(m) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& m) : std::runtime_error(m) {}
};
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& m) : std::runtime_error(m) {}
};

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

class Tensor {
 public:
  Shape shape;
  std::vector<double> data;  // row-major
  std::vector<double> grad;  // allocated on demand, same extent as data
  bool requires_grad = false;

  // graph wiring; empty for leaves
  std::vector<TensorPtr> parents;
  std::function<void(Tensor&)> backward_fn;

  Tensor(Shape s, bool rg) : shape(std::move(s)), requires_grad(rg) {
    data.assign(static_cast<size_t>(numel(shape)), 0.0);
  }

  int64_t size() const { return static_cast<int64_t>(data.size()); }
  int64_t rows() const { return shape.empty() ? 1 : shape[0]; }
  int64_t cols() const { return shape.size() < 2 ? size() / rows() : shape[1]; }
  bool is_scalar() const { return size() == 1; }
  double scalar_value() const { return data[0]; }

  double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
  double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * cols() + j)]; }
  double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols() + j)]; }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() { grad.assign(data.size(), 0.0); }

  static TensorPtr leaf(Shape s, bool requires_grad = false) {
    return std::make_shared<Tensor>(std::move(s), requires_grad);
  }
  static TensorPtr zeros(Shape s) { return leaf(std::move(s)); }
  static TensorPtr full(Shape s, double v);
  static TensorPtr scalar(double v) { return full({1}, v); }
  static TensorPtr from(Shape s, std::vector<double> values);
  static TensorPtr randn(Shape s, Rng& rng, double stddev = 1.0, bool requires_grad = true);
  static TensorPtr uniform(Shape s, Rng& rng, double lo, double hi, bool requires_grad = true);
};

// Runs reverse-mode from a scalar output. Leaf gradients accumulate; call
// zero_grad on parameters between optimizer steps.
void backward(const TensorPtr& out);

// ---- differentiable operations ------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr transpose(const TensorPtr& x);
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(const TensorPtr& x, double c);
TensorPtr add_scalar(const TensorPtr& x, double c);
// row is [n] or [1 x n], added to every row of x [m x n]
TensorPtr add_row_broadcast(const TensorPtr& x, const TensorPtr& row);
TensorPtr relu(const TensorPtr& x);
TensorPtr abs_elem(const TensorPtr& x);
TensorPtr sqrt_elem(const TensorPtr& x);
TensorPtr sin_elem(const TensorPtr& x);
TensorPtr cos_elem(const TensorPtr& x);
TensorPtr softmax(const TensorPtr& x, int axis);
TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias,
                     double eps = 1e-5);
TensorPtr sum_all(const TensorPtr& x);
TensorPtr sum_rows(const TensorPtr& x);   // [m x n] -> [m]
TensorPtr mean_rows(const TensorPtr& x);  // [m x n] -> [1 x n]
TensorPtr concat_rows(const std::vector<TensorPtr>& xs);
TensorPtr concat_cols(const std::vector<TensorPtr>& xs);
TensorPtr slice_rows(const TensorPtr& x, int64_t r0, int64_t r1);
TensorPtr slice_cols(const TensorPtr& x, int64_t c0, int64_t c1);
TensorPtr reshape(const TensorPtr& x, Shape s);
TensorPtr gather_rows(const TensorPtr& table, const std::vector<int64_t>& ids);

// Mean negative log-likelihood over rows whose target != ignore_id.
TensorPtr cross_entropy(const TensorPtr& logits, const std::vector<int64_t>& targets,
                        int64_t ignore_id = -1);
// -sum_j p_j * log softmax(z)_j for a single logit row and soft target p.
TensorPtr cross_entropy_soft(const TensorPtr& logits, const std::vector<double>& target_probs);

}  // namespace kerg
