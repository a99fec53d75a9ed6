#include "kerg/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

namespace kerg {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

TensorPtr Tensor::full(Shape s, double v) {
  auto t = leaf(std::move(s));
  std::fill(t->data.begin(), t->data.end(), v);
  return t;
}

TensorPtr Tensor::from(Shape s, std::vector<double> values) {
  auto t = leaf(std::move(s));
  if (static_cast<int64_t>(values.size()) != t->size())
    throw DimensionError("from: " + std::to_string(values.size()) + " values for shape " +
                         shape_str(t->shape));
  t->data = std::move(values);
  return t;
}

TensorPtr Tensor::randn(Shape s, Rng& rng, double stddev, bool requires_grad) {
  auto t = leaf(std::move(s), requires_grad);
  for (auto& v : t->data) v = stddev * rng.normal();
  return t;
}

TensorPtr Tensor::uniform(Shape s, Rng& rng, double lo, double hi, bool requires_grad) {
  auto t = leaf(std::move(s), requires_grad);
  for (auto& v : t->data) v = rng.uniform(lo, hi);
  return t;
}

namespace {

TensorPtr make_node(Shape s, std::vector<TensorPtr> parents, std::function<void(Tensor&)> bw) {
  bool rg = false;
  for (const auto& p : parents) rg = rg || p->requires_grad;
  auto t = Tensor::leaf(std::move(s), rg);
  if (rg) {
    t->parents = std::move(parents);
    t->backward_fn = std::move(bw);
  }
  return t;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape)
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

void accumulate(Tensor& dst, const std::vector<double>& g) {
  dst.ensure_grad();
  for (size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

}  // namespace

void backward(const TensorPtr& out) {
  if (!out->is_scalar())
    throw ContractError("backward requires a scalar output, got " + shape_str(out->shape));
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> visited;
  std::vector<std::pair<Tensor*, size_t>> stack;
  stack.emplace_back(out.get(), 0);
  visited.insert(out.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Tensor* p = node->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  out->ensure_grad();
  out->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

// ---- linear algebra -------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->shape.size() != 2 || b->shape.size() != 2 || a->shape[1] != b->shape[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(a->shape) + " and " +
                         shape_str(b->shape));
  const int64_t m = a->shape[0], n = a->shape[1], p = b->shape[1];
  auto out = make_node({m, p}, {a, b}, [m, n, p](Tensor& self) {
    const auto& pa = self.parents[0];
    const auto& pb = self.parents[1];
    CMap gC(self.grad.data(), m, p);
    CMap A(pa->data.data(), m, n);
    CMap B(pb->data.data(), n, p);
    if (pa->requires_grad) {
      pa->ensure_grad();
      Map gA(pa->grad.data(), m, n);
      gA.noalias() += gC * B.transpose();
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      Map gB(pb->grad.data(), n, p);
      gB.noalias() += A.transpose() * gC;
    }
  });
  Map C(out->data.data(), m, p);
  CMap A(a->data.data(), m, n);
  CMap B(b->data.data(), n, p);
  C.noalias() = A * B;
  return out;
}

TensorPtr transpose(const TensorPtr& x) {
  if (x->shape.size() != 2) throw DimensionError("transpose: need 2-d, got " + shape_str(x->shape));
  const int64_t m = x->shape[0], n = x->shape[1];
  auto out = make_node({n, m}, {x}, [m, n](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) p->grad[i * n + j] += self.grad[j * m + i];
  });
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out->data[j * m + i] = x->data[i * n + j];
  return out;
}

// ---- elementwise ----------------------------------------------------------

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(*a, *b, "add");
  auto out = make_node(a->shape, {a, b}, [](Tensor& self) {
    for (const auto& p : self.parents)
      if (p->requires_grad) accumulate(*p, self.grad);
  });
  for (int64_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] + b->data[i];
  return out;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(*a, *b, "sub");
  auto out = make_node(a->shape, {a, b}, [](Tensor& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) accumulate(*pa, self.grad);
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
    }
  });
  for (int64_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] - b->data[i];
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  require_same_shape(*a, *b, "mul");
  auto out = make_node(a->shape, {a, b}, [](Tensor& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i] * pb->data[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] += self.grad[i] * pa->data[i];
    }
  });
  for (int64_t i = 0; i < out->size(); ++i) out->data[i] = a->data[i] * b->data[i];
  return out;
}

TensorPtr scale(const TensorPtr& x, double c) {
  auto out = make_node(x->shape, {x}, [c](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += c * self.grad[i];
  });
  for (int64_t i = 0; i < out->size(); ++i) out->data[i] = c * x->data[i];
  return out;
}

TensorPtr add_scalar(const TensorPtr& x, double c) {
  auto out = make_node(x->shape, {x}, [](Tensor& self) { accumulate(*self.parents[0], self.grad); });
  for (int64_t i = 0; i < out->size(); ++i) out->data[i] = x->data[i] + c;
  return out;
}

TensorPtr add_row_broadcast(const TensorPtr& x, const TensorPtr& row) {
  const int64_t m = x->rows(), n = x->cols();
  if (row->size() != n)
    throw DimensionError("add_row_broadcast: row " + shape_str(row->shape) + " vs matrix " +
                         shape_str(x->shape));
  auto out = make_node(x->shape, {x, row}, [m, n](Tensor& self) {
    auto& px = self.parents[0];
    auto& pr = self.parents[1];
    if (px->requires_grad) accumulate(*px, self.grad);
    if (pr->requires_grad) {
      pr->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) pr->grad[j] += self.grad[i * n + j];
    }
  });
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) out->data[i * n + j] = x->data[i * n + j] + row->data[j];
  return out;
}

TensorPtr relu(const TensorPtr& x) {
  auto out = make_node(x->shape, {x}, [](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (p->data[i] > 0.0) p->grad[i] += self.grad[i];
  });
  for (int64_t i = 0; i < out->size(); ++i) out->data[i] = x->data[i] > 0.0 ? x->data[i] : 0.0;
  return out;
}

TensorPtr abs_elem(const TensorPtr& x) {
  auto out = make_node(x->shape, {x}, [](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const double s = p->data[i] > 0.0 ? 1.0 : (p->data[i] < 0.0 ? -1.0 : 0.0);
      p->grad[i] += self.grad[i] * s;
    }
  });
  for (int64_t i = 0; i < out->size(); ++i) out->data[i] = std::abs(x->data[i]);
  return out;
}

TensorPtr sqrt_elem(const TensorPtr& x) {
  auto out = make_node(x->shape, {x}, [](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    // clamp keeps the zero-distance corner from emitting infinities
    for (size_t i = 0; i < self.grad.size(); ++i)
      p->grad[i] += self.grad[i] * 0.5 / std::max(self.data[i], 1e-12);
  });
  for (int64_t i = 0; i < out->size(); ++i) out->data[i] = std::sqrt(x->data[i]);
  return out;
}

TensorPtr sin_elem(const TensorPtr& x) {
  auto out = make_node(x->shape, {x}, [](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * std::cos(p->data[i]);
  });
  for (int64_t i = 0; i < out->size(); ++i) out->data[i] = std::sin(x->data[i]);
  return out;
}

TensorPtr cos_elem(const TensorPtr& x) {
  auto out = make_node(x->shape, {x}, [](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p->grad[i] -= self.grad[i] * std::sin(p->data[i]);
  });
  for (int64_t i = 0; i < out->size(); ++i) out->data[i] = std::cos(x->data[i]);
  return out;
}

// ---- softmax / layer norm -------------------------------------------------

namespace {

// Stable softmax over contiguous slices of length n with stride 1, slice
// starts given by base offsets.
void softmax_slices(const std::vector<double>& in, std::vector<double>& out, int64_t slices,
                    int64_t n, int64_t slice_stride, int64_t elem_stride) {
  for (int64_t s = 0; s < slices; ++s) {
    const int64_t base = s * slice_stride;
    double mx = in[base];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, in[base + i * elem_stride]);
    double sum = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double e = std::exp(in[base + i * elem_stride] - mx);
      out[base + i * elem_stride] = e;
      sum += e;
    }
    for (int64_t i = 0; i < n; ++i) out[base + i * elem_stride] /= sum;
  }
}

}  // namespace

TensorPtr softmax(const TensorPtr& x, int axis) {
  for (double v : x->data)
    if (std::isnan(v)) throw NumericError("softmax: NaN in input");
  const bool is1d = x->shape.size() <= 1;
  const int64_t m = is1d ? 1 : x->shape[0];
  const int64_t n = is1d ? x->size() : x->shape[1];
  if (is1d && axis != 0) throw DimensionError("softmax: axis out of range for 1-d input");
  if (!is1d && axis != 0 && axis != 1) throw DimensionError("softmax: axis must be 0 or 1");
  const bool by_rows = is1d || axis == 1;
  const int64_t slices = by_rows ? m : n;
  const int64_t len = by_rows ? n : m;
  const int64_t slice_stride = by_rows ? n : 1;
  const int64_t elem_stride = by_rows ? 1 : n;

  auto out = make_node(x->shape, {x}, [slices, len, slice_stride, elem_stride](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int64_t s = 0; s < slices; ++s) {
      const int64_t base = s * slice_stride;
      double dot = 0.0;
      for (int64_t i = 0; i < len; ++i) {
        const int64_t k = base + i * elem_stride;
        dot += self.grad[k] * self.data[k];
      }
      for (int64_t i = 0; i < len; ++i) {
        const int64_t k = base + i * elem_stride;
        p->grad[k] += self.data[k] * (self.grad[k] - dot);
      }
    }
  });
  softmax_slices(x->data, out->data, slices, len, slice_stride, elem_stride);
  return out;
}

TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gain, const TensorPtr& bias, double eps) {
  const int64_t n = x->shape.empty() ? x->size() : x->shape.back();
  const int64_t m = x->size() / n;
  if (n < 2) throw DimensionError("layer_norm: last axis extent must be >= 2, got " + shape_str(x->shape));
  if (gain->size() != n || bias->size() != n)
    throw DimensionError("layer_norm: gain/bias length " + std::to_string(gain->size()) + "/" +
                         std::to_string(bias->size()) + " vs axis " + std::to_string(n));

  auto mean_v = std::make_shared<std::vector<double>>(m);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  auto out = make_node(x->shape, {x, gain, bias}, [n, m, mean_v, inv_std](Tensor& self) {
    auto& px = self.parents[0];
    auto& pg = self.parents[1];
    auto& pb = self.parents[2];
    for (int64_t r = 0; r < m; ++r) {
      const int64_t base = r * n;
      const double mu = (*mean_v)[r];
      const double is = (*inv_std)[r];
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int64_t j = 0; j < n; ++j) {
        const double xhat = (px->data[base + j] - mu) * is;
        const double dxhat = self.grad[base + j] * pg->data[j];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat;
        if (pg->requires_grad) {
          pg->ensure_grad();
          pg->grad[j] += self.grad[base + j] * xhat;
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          pb->grad[j] += self.grad[base + j];
        }
      }
      if (px->requires_grad) {
        px->ensure_grad();
        for (int64_t j = 0; j < n; ++j) {
          const double xhat = (px->data[base + j] - mu) * is;
          const double dxhat = self.grad[base + j] * pg->data[j];
          px->grad[base + j] +=
              is * (dxhat - sum_dxhat / static_cast<double>(n) -
                    xhat * sum_dxhat_xhat / static_cast<double>(n));
        }
      }
    }
  });
  for (int64_t r = 0; r < m; ++r) {
    const int64_t base = r * n;
    double mu = 0.0;
    for (int64_t j = 0; j < n; ++j) mu += x->data[base + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      const double d = x->data[base + j] - mu;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*mean_v)[r] = mu;
    (*inv_std)[r] = is;
    for (int64_t j = 0; j < n; ++j)
      out->data[base + j] = (x->data[base + j] - mu) * is * gain->data[j] + bias->data[j];
  }
  return out;
}

// ---- reductions / reshaping ------------------------------------------------

TensorPtr sum_all(const TensorPtr& x) {
  auto out = make_node({1}, {x}, [](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (auto& g : p->grad) g += self.grad[0];
  });
  double s = 0.0;
  for (double v : x->data) s += v;
  out->data[0] = s;
  return out;
}

TensorPtr sum_rows(const TensorPtr& x) {
  const int64_t m = x->rows(), n = x->cols();
  auto out = make_node({m}, {x}, [m, n](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) p->grad[i * n + j] += self.grad[i];
  });
  for (int64_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (int64_t j = 0; j < n; ++j) s += x->data[i * n + j];
    out->data[i] = s;
  }
  return out;
}

TensorPtr mean_rows(const TensorPtr& x) {
  const int64_t m = x->rows(), n = x->cols();
  auto out = make_node({1, n}, {x}, [m, n](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    const double inv = 1.0 / static_cast<double>(m);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) p->grad[i * n + j] += self.grad[j] * inv;
  });
  for (int64_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (int64_t i = 0; i < m; ++i) s += x->data[i * n + j];
    out->data[j] = s / static_cast<double>(m);
  }
  return out;
}

TensorPtr concat_rows(const std::vector<TensorPtr>& xs) {
  if (xs.empty()) throw DimensionError("concat_rows: empty input");
  const int64_t n = xs[0]->cols();
  int64_t m = 0;
  for (const auto& x : xs) {
    if (x->cols() != n)
      throw DimensionError("concat_rows: width mismatch " + shape_str(x->shape) + " vs " +
                           shape_str(xs[0]->shape));
    m += x->rows();
  }
  std::vector<TensorPtr> parents(xs.begin(), xs.end());
  auto out = make_node({m, n}, std::move(parents), [n](Tensor& self) {
    int64_t row = 0;
    for (auto& p : self.parents) {
      const int64_t r = p->rows();
      if (p->requires_grad) {
        p->ensure_grad();
        for (int64_t i = 0; i < r * n; ++i) p->grad[i] += self.grad[row * n + i];
      }
      row += r;
    }
  });
  int64_t row = 0;
  for (const auto& x : xs) {
    std::copy(x->data.begin(), x->data.end(), out->data.begin() + row * n);
    row += x->rows();
  }
  return out;
}

TensorPtr concat_cols(const std::vector<TensorPtr>& xs) {
  if (xs.empty()) throw DimensionError("concat_cols: empty input");
  const int64_t m = xs[0]->rows();
  int64_t n = 0;
  for (const auto& x : xs) {
    if (x->rows() != m)
      throw DimensionError("concat_cols: height mismatch " + shape_str(x->shape) + " vs " +
                           shape_str(xs[0]->shape));
    n += x->cols();
  }
  std::vector<TensorPtr> parents(xs.begin(), xs.end());
  auto out = make_node({m, n}, std::move(parents), [m, n](Tensor& self) {
    int64_t col = 0;
    for (auto& p : self.parents) {
      const int64_t c = p->cols();
      if (p->requires_grad) {
        p->ensure_grad();
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < c; ++j) p->grad[i * c + j] += self.grad[i * n + col + j];
      }
      col += c;
    }
  });
  int64_t col = 0;
  for (const auto& x : xs) {
    const int64_t c = x->cols();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < c; ++j) out->data[i * n + col + j] = x->data[i * c + j];
    col += c;
  }
  return out;
}

TensorPtr slice_rows(const TensorPtr& x, int64_t r0, int64_t r1) {
  const int64_t m = x->rows(), n = x->cols();
  if (r0 < 0 || r1 > m || r0 >= r1)
    throw DimensionError("slice_rows: [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") of " + shape_str(x->shape));
  auto out = make_node({r1 - r0, n}, {x}, [r0, n](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) p->grad[r0 * n + i] += self.grad[i];
  });
  std::copy(x->data.begin() + r0 * n, x->data.begin() + r1 * n, out->data.begin());
  return out;
}

TensorPtr slice_cols(const TensorPtr& x, int64_t c0, int64_t c1) {
  const int64_t m = x->rows(), n = x->cols();
  if (c0 < 0 || c1 > n || c0 >= c1)
    throw DimensionError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") of " + shape_str(x->shape));
  const int64_t w = c1 - c0;
  auto out = make_node({m, w}, {x}, [c0, n, w, m](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < w; ++j) p->grad[i * n + c0 + j] += self.grad[i * w + j];
  });
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < w; ++j) out->data[i * w + j] = x->data[i * n + c0 + j];
  return out;
}

TensorPtr reshape(const TensorPtr& x, Shape s) {
  if (numel(s) != x->size())
    throw DimensionError("reshape: " + shape_str(x->shape) + " to " + shape_str(s));
  auto out = make_node(std::move(s), {x}, [](Tensor& self) { accumulate(*self.parents[0], self.grad); });
  out->data = x->data;
  return out;
}

TensorPtr gather_rows(const TensorPtr& table, const std::vector<int64_t>& ids) {
  const int64_t n = table->cols();
  const int64_t v = table->rows();
  for (int64_t id : ids)
    if (id < 0 || id >= v)
      throw DimensionError("gather_rows: id " + std::to_string(id) + " out of " + std::to_string(v));
  auto out = make_node({static_cast<int64_t>(ids.size()), n}, {table}, [ids, n](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (size_t r = 0; r < ids.size(); ++r)
      for (int64_t j = 0; j < n; ++j) p->grad[ids[r] * n + j] += self.grad[r * n + j];
  });
  for (size_t r = 0; r < ids.size(); ++r)
    std::copy(table->data.begin() + ids[r] * n, table->data.begin() + (ids[r] + 1) * n,
              out->data.begin() + r * n);
  return out;
}

// ---- losses ----------------------------------------------------------------

TensorPtr cross_entropy(const TensorPtr& logits, const std::vector<int64_t>& targets,
                        int64_t ignore_id) {
  const int64_t m = logits->rows(), v = logits->cols();
  if (static_cast<int64_t>(targets.size()) != m)
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_str(logits->shape));
  int64_t count = 0;
  for (int64_t t : targets)
    if (t != ignore_id) ++count;
  if (count == 0) throw ContractError("cross_entropy: no unmasked targets");

  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(m * v));
  softmax_slices(logits->data, *probs, m, v, v, 1);
  auto out = make_node({1}, {logits}, [targets, ignore_id, m, v, count, probs](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    const double g = self.grad[0] / static_cast<double>(count);
    for (int64_t r = 0; r < m; ++r) {
      if (targets[r] == ignore_id) continue;
      for (int64_t j = 0; j < v; ++j) p->grad[r * v + j] += g * (*probs)[r * v + j];
      p->grad[r * v + targets[r]] -= g;
    }
  });
  double loss = 0.0;
  for (int64_t r = 0; r < m; ++r) {
    if (targets[r] == ignore_id) continue;
    loss -= std::log(std::max((*probs)[r * v + targets[r]], 1e-300));
  }
  out->data[0] = loss / static_cast<double>(count);
  return out;
}

TensorPtr cross_entropy_soft(const TensorPtr& logits, const std::vector<double>& target_probs) {
  const int64_t v = logits->size();
  if (static_cast<int64_t>(target_probs.size()) != v)
    throw DimensionError("cross_entropy_soft: " + std::to_string(target_probs.size()) +
                         " target probs for " + shape_str(logits->shape));
  auto probs = std::make_shared<std::vector<double>>(static_cast<size_t>(v));
  softmax_slices(logits->data, *probs, 1, v, v, 1);
  auto out = make_node({1}, {logits}, [target_probs, v, probs](Tensor& self) {
    auto& p = self.parents[0];
    p->ensure_grad();
    for (int64_t j = 0; j < v; ++j)
      p->grad[j] += self.grad[0] * ((*probs)[j] - target_probs[j]);
  });
  double loss = 0.0;
  for (int64_t j = 0; j < v; ++j)
    loss -= target_probs[j] * std::log(std::max((*probs)[j], 1e-300));
  out->data[0] = loss;
  return out;
}

}  // namespace kerg
