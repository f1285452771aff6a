#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>

#include "spi/pattern.hpp"

namespace spi {

// Pattern ids one classifier (or a person) calls single hits.
struct SelectionSet {
  std::string method;
  std::optional<double> threshold;
  std::set<PatternId> ids;

  [[nodiscard]] std::size_t size() const noexcept { return ids.size(); }
  friend bool operator==(const SelectionSet&, const SelectionSet&) = default;
};

struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  [[nodiscard]] std::size_t total() const noexcept { return tp + tn + fp + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

// Zero denominators leave a metric undefined (empty), never 0 or 1.
struct MetricReport {
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> recall;
  std::optional<double> f1;
  ConfusionCounts counts;
};

// TP = |P n R|, FP = |P \ R|, FN = |R \ P|, TN = |U \ (P u R)|. Throws
// ValidationError naming the first id of P or R that is outside U.
ConfusionCounts confusion(const SelectionSet& predicted, const SelectionSet& reference,
                          const std::set<PatternId>& universe);

// Throws ConfigError when counts.total() == 0.
MetricReport metric_report(const ConfusionCounts& counts);

std::optional<double> f1_score(std::optional<double> precision, std::optional<double> recall) noexcept;

// |A n B| / (|A| + |B| - |A n B|); 1 when both are empty.
double selection_iou(const SelectionSet& a, const SelectionSet& b);
double selection_iou(std::size_t size_a, std::size_t size_b, std::size_t intersection);
std::size_t intersection_size(const SelectionSet& a, const SelectionSet& b);

// sqrt(sum (x - mean)^2 / N); throws ConfigError on an empty list.
double population_std(std::span<const double> values);
double mean(std::span<const double> values);

enum class Resolution {
  human,    // percentages rounded to 0.1
  machine,  // fractions at full precision
};

// Flat JSON object: tp, tn, fp, fn, accuracy, precision, recall, f1
// (null when undefined), plus iou/intersection when given.
std::string metric_report_json(const MetricReport& report, Resolution resolution,
                               std::optional<double> iou = std::nullopt,
                               std::optional<std::size_t> intersection = std::nullopt);

// Rounded percentage text ("44", "97.0", or "undefined").
std::string percent(std::optional<double> fraction, int decimals);

}  // namespace spi
