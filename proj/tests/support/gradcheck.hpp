#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "g2sd/ops.hpp"
#include "g2sd/rng.hpp"
#include "g2sd/tensor.hpp"

namespace g2sd::testing {

inline TensorD random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = uniform(rng, lo, hi);
  return TensorD::from_data(shape, std::move(v), true);
}

struct GradCheckResult {
  double rel_error = 0.0;
  double max_abs = 0.0;
};

// Central differences of L = sum(f(inputs) * R) for a fixed random R,
// compared with reverse mode. rel_error is ||g_a - g_n|| / max(||g_a||, ||g_n||)
// over all inputs.
inline GradCheckResult grad_check(const std::function<TensorD(const std::vector<TensorD>&)>& f,
                                  std::vector<TensorD> inputs, Rng& rng, double h = 1e-6) {
  for (auto& x : inputs) {
    x.zero_grad();
    x.set_requires_grad(true);
  }
  TensorD out = f(inputs);
  std::vector<double> r(static_cast<std::size_t>(out.numel()));
  for (auto& v : r) v = uniform(rng, -1.0, 1.0);
  const TensorD weights = TensorD::from_data(out.shape(), r);
  TensorD loss = sum(mul(out, weights));
  loss.backward();

  auto eval = [&]() {
    NoGradGuard guard;
    const TensorD o = f(inputs);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += o.data()[i] * r[i];
    return s;
  };
  double diff2 = 0.0;
  double a2 = 0.0;
  double n2 = 0.0;
  GradCheckResult res;
  for (auto& x : inputs) {
    std::vector<double> analytic(static_cast<std::size_t>(x.numel()), 0.0);
    if (x.has_grad()) analytic.assign(x.grad().begin(), x.grad().end());
    auto data = x.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = eval();
      data[i] = saved - h;
      const double down = eval();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      diff2 += (numeric - analytic[i]) * (numeric - analytic[i]);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
      res.max_abs = std::max(res.max_abs, std::abs(numeric - analytic[i]));
    }
  }
  const double denom = std::max(std::sqrt(std::max(a2, n2)), 1e-300);
  res.rel_error = std::sqrt(diff2) / denom;
  return res;
}

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;  // input shapes
  std::function<TensorD(const std::vector<TensorD>&)> f;
  double lo = -1.0;
  double hi = 1.0;
};

// Every differentiable op, each over at least five shape configurations.
std::vector<OpCase> gradient_suite();

}  // namespace g2sd::testing
