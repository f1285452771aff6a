#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace spi {

// One block of inputs to a scalar function together with the analytic
// gradient the caller computed for it. `values` is perturbed in place and
// restored before grad_check returns.
struct GradGroup {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GroupError {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GroupError> groups;

  [[nodiscard]] double worst() const noexcept;
  [[nodiscard]] bool passed(double tolerance) const noexcept { return worst() <= tolerance; }
};

inline constexpr double kGradCheckEps = 1e-5;

// Central differences (f(x+eps) - f(x-eps)) / (2 eps) against the analytic
// gradient; per element |a - n| / max(|a|, |n|, 1e-8), worst per group.
GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradGroup> groups,
                           double eps = kGradCheckEps);

}  // namespace spi
