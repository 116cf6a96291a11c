#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "inat/tensor.hpp"

namespace inat {

// Central-difference check of the tape. `f` rebuilds a scalar loss from the
// given leaves on every call; leaves are perturbed in place. Returns the worst
// relative error across all leaf elements, |fd − g| / max(1e-6, |fd|, |g|).
// The 1e-6 denominator floor is an absolute-tolerance guard: a double-precision
// central difference of a loss near 1 cannot resolve gradients much below
// machine_eps/eps, so comparisons that small are noise, not signal.
template <typename Real, typename F>
double grad_check(F&& f, std::vector<Tensor<Real>> leaves, double eps = 1e-5) {
  if (!(eps > 0.0) || eps > 1e-2)
    throw ConfigError("grad_check: eps must lie in (0, 1e-2], got " + std::to_string(eps));

  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  Tensor<Real> loss = f();
  if (!std::isfinite(static_cast<double>(loss.item())))
    throw NumericError("grad_check: loss is not finite");
  loss.backward();

  std::vector<std::vector<Real>> analytic;
  analytic.reserve(leaves.size());
  for (auto& leaf : leaves) {
    auto g = leaf.mutable_grad();
    analytic.emplace_back(g.begin(), g.end());
  }

  const auto eval = [&]() -> double {
    NoGradGuard ng;
    return static_cast<double>(f().item());
  };

  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto data = leaves[li].mutable_data();
    for (size_t i = 0; i < data.size(); ++i) {
      const Real saved = data[i];
      data[i] = saved + static_cast<Real>(eps);
      const double up = eval();
      data[i] = saved - static_cast<Real>(eps);
      const double down = eval();
      data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("grad_check: non-finite evaluation during perturbation");
      const double fd = (up - down) / (2.0 * eps);
      const double an = static_cast<double>(analytic[li][i]);
      const double denom = std::max({1e-6, std::abs(fd), std::abs(an)});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

}  // namespace inat
