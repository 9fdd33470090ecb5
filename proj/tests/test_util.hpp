#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "colf/tensor.hpp"

namespace colf::testing {

inline double rel_err(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / scale;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a[i], b[i]));
  return worst;
}

inline TensorPtr random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double lo = -1.0,
                               double hi = 1.0) {
  auto t = zeros(std::move(shape), requires_grad);
  for (auto& v : t->data) v = rng.uniform(lo, hi);
  return t;
}

// Reverse-mode vs central-difference check for a scalar-valued graph builder.
// The builder is re-run from scratch for every probe, so the finite-difference
// estimate never touches the gradient path it verifies.
template <typename BuildLoss>
double check_gradients(const TensorPtr& x, BuildLoss build, double h = 1e-5) {
  x->grad.clear();
  {
    Tape tape;
    auto loss = build();
    tape.backward(loss);
  }
  std::vector<double> ad = x->grad;
  const std::vector<double> saved = x->data;
  auto fd = finite_difference_grad(
      [&](const std::vector<double>& probe) {
        x->data = probe;
        const double v = build()->scalar();
        return v;
      },
      saved, h);
  x->data = saved;
  return max_rel_err(ad, fd);
}

}  // namespace colf::testing
