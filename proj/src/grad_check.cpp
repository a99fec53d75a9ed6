#include "kerg/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "kerg/rng.hpp"

namespace kerg {

GradCheckReport check_gradients(const std::function<TensorPtr()>& loss_fn,
                                const std::vector<std::pair<std::string, TensorPtr>>& params,
                                double step, int64_t max_checks_per_param, uint64_t subsample_seed,
                                double abs_floor) {
  for (const auto& [name, p] : params) p->zero_grad();
  auto loss = loss_fn();
  backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) {
    p->ensure_grad();
    analytic.push_back(p->grad);
  }

  GradCheckReport report;
  Rng rng(subsample_seed);
  for (size_t pi = 0; pi < params.size(); ++pi) {
    const auto& [name, p] = params[pi];
    std::vector<int64_t> idx;
    if (max_checks_per_param > 0 && p->size() > max_checks_per_param) {
      Rng sub = rng.fork(pi);
      for (int64_t k = 0; k < max_checks_per_param; ++k)
        idx.push_back(sub.uniform_int(p->size()));
      std::sort(idx.begin(), idx.end());
      idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    } else {
      idx.resize(p->size());
      for (int64_t k = 0; k < p->size(); ++k) idx[k] = k;
    }
    for (int64_t k : idx) {
      const double saved = p->data[k];
      p->data[k] = saved + step;
      const double f_plus = loss_fn()->data[0];
      p->data[k] = saved - step;
      const double f_minus = loss_fn()->data[0];
      p->data[k] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double a = analytic[pi][k];
      const double gap = std::abs(a - numeric);
      const double rel = gap <= abs_floor ? 0.0 : gap / std::max(std::abs(a), std::abs(numeric));
      ++report.entries_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = k;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace kerg
