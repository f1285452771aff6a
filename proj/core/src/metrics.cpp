#include "spi/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <numeric>

#include "spi/errors.hpp"

namespace spi {

ConfusionCounts confusion(const SelectionSet& predicted, const SelectionSet& reference,
                          const std::set<PatternId>& universe) {
  for (const SelectionSet* s : {&predicted, &reference}) {
    for (PatternId id : s->ids) {
      if (!universe.contains(id)) {
        throw ValidationError("pattern id " + std::to_string(id) + " in selection '" + s->method +
                              "' is outside the evaluated universe");
      }
    }
  }
  ConfusionCounts counts;
  for (PatternId id : universe) {
    const bool p = predicted.ids.contains(id);
    const bool r = reference.ids.contains(id);
    if (p && r) {
      ++counts.tp;
    } else if (p) {
      ++counts.fp;
    } else if (r) {
      ++counts.fn;
    } else {
      ++counts.tn;
    }
  }
  return counts;
}

std::optional<double> f1_score(std::optional<double> precision, std::optional<double> recall) noexcept {
  if (!precision || !recall) return std::nullopt;
  const double sum = *precision + *recall;
  if (sum <= 0.0) return std::nullopt;
  return 2.0 * *precision * *recall / sum;
}

MetricReport metric_report(const ConfusionCounts& counts) {
  const std::size_t total = counts.total();
  if (total == 0) throw ConfigError("cannot compute metrics over zero evaluated patterns");
  MetricReport report;
  report.counts = counts;
  report.accuracy = static_cast<double>(counts.tp + counts.tn) / static_cast<double>(total);
  if (counts.tp + counts.fp > 0) {
    report.precision = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fp);
  }
  if (counts.tp + counts.fn > 0) {
    report.recall = static_cast<double>(counts.tp) / static_cast<double>(counts.tp + counts.fn);
  }
  report.f1 = f1_score(report.precision, report.recall);
  return report;
}

std::size_t intersection_size(const SelectionSet& a, const SelectionSet& b) {
  const SelectionSet& small = a.size() <= b.size() ? a : b;
  const SelectionSet& large = a.size() <= b.size() ? b : a;
  std::size_t n = 0;
  for (PatternId id : small.ids) n += large.ids.contains(id) ? 1 : 0;
  return n;
}

double selection_iou(std::size_t size_a, std::size_t size_b, std::size_t intersection) {
  if (intersection > size_a || intersection > size_b) {
    throw ConfigError("intersection cannot exceed either selection size");
  }
  const std::size_t uni = size_a + size_b - intersection;
  if (uni == 0) return 1.0;
  return static_cast<double>(intersection) / static_cast<double>(uni);
}

double selection_iou(const SelectionSet& a, const SelectionSet& b) {
  return selection_iou(a.size(), b.size(), intersection_size(a, b));
}

double mean(std::span<const double> values) {
  if (values.empty()) throw ConfigError("mean of an empty list");
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double population_std(std::span<const double> values) {
  if (values.empty()) throw ConfigError("population_std of an empty list");
  const double m = mean(values);
  double sq = 0.0;
  for (double v : values) sq += (v - m) * (v - m);
  return std::sqrt(sq / static_cast<double>(values.size()));
}

std::string percent(std::optional<double> fraction, int decimals) {
  if (!fraction) return "undefined";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, *fraction * 100.0);
  return buf;
}

std::string metric_report_json(const MetricReport& report, Resolution resolution, std::optional<double> iou,
                               std::optional<std::size_t> intersection) {
  const auto value = [resolution](std::optional<double> v) -> nlohmann::json {
    if (!v) return nullptr;
    if (resolution == Resolution::machine) return *v;
    return std::round(*v * 1000.0) / 10.0;
  };
  nlohmann::json j;
  j["tp"] = report.counts.tp;
  j["tn"] = report.counts.tn;
  j["fp"] = report.counts.fp;
  j["fn"] = report.counts.fn;
  j["total"] = report.counts.total();
  j["accuracy"] = value(report.accuracy);
  j["precision"] = value(report.precision);
  j["recall"] = value(report.recall);
  j["f1"] = value(report.f1);
  if (iou) j["iou"] = value(iou);
  if (intersection) j["intersection"] = *intersection;
  j["units"] = resolution == Resolution::machine ? "fraction" : "percent";
  return j.dump();
}

}  // namespace spi
