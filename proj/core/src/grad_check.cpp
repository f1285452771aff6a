#include "spi/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "spi/errors.hpp"

namespace spi {

double GradCheckReport::worst() const noexcept {
  double worst = 0.0;
  for (const GroupError& g : groups) worst = std::max(worst, g.max_relative_error);
  return worst;
}

GradCheckReport grad_check(const std::function<double()>& loss, std::span<const GradGroup> groups, double eps) {
  if (!(eps > 0.0)) throw ConfigError("grad_check: eps must be positive");
  GradCheckReport report;
  for (const GradGroup& group : groups) {
    if (group.values.size() != group.analytic.size()) {
      throw ShapeError("grad_check: group '" + group.name + "' has " + std::to_string(group.values.size()) +
                       " values but " + std::to_string(group.analytic.size()) + " analytic entries");
    }
    GroupError err{group.name};
    for (std::size_t i = 0; i < group.values.size(); ++i) {
      const double saved = group.values[i];
      group.values[i] = saved + eps;
      const double up = loss();
      group.values[i] = saved - eps;
      const double down = loss();
      group.values[i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = group.analytic[i];
      const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / scale;
      if (rel > err.max_relative_error || !std::isfinite(rel)) {
        err.max_relative_error = std::isfinite(rel) ? rel : INFINITY;
        err.worst_index = i;
        err.analytic = analytic;
        err.numeric = numeric;
      }
    }
    report.groups.push_back(std::move(err));
  }
  return report;
}

}  // namespace spi
