#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "arvit/core/tensor.hpp"
#include "json.hpp"

namespace arvit {

// Image-level counts, malignant (1) is the positive class.
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t tn = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

// p >= threshold counts as a positive prediction. Throws ContractError on a
// length mismatch and InputError on labels outside {0,1}.
ConfusionCounts confusion(std::span<const Real> scores, std::span<const int> labels,
                          Real threshold = 0.5);

// nullopt marks an undefined metric (zero denominator).
std::optional<Real> accuracy(const ConfusionCounts& c);
std::optional<Real> true_positive_rate(const ConfusionCounts& c);
std::optional<Real> true_negative_rate(const ConfusionCounts& c);

struct RocPoint {
  Real threshold = 0.0;  // predictions with score >= threshold are positive
  Real fpr = 0.0;
  Real tpr = 0.0;
};

struct RocCurve {
  Real auc = 0.0;
  std::vector<RocPoint> points;  // from (0,0) to (1,1), fpr and tpr nondecreasing
};

// Mann-Whitney AUC from midranks (ties count one half) plus the ROC points
// for every distinct threshold. nullopt when only one class is present.
std::optional<RocCurve> roc_auc(std::span<const Real> scores, std::span<const int> labels);

// Trapezoidal area under a point list.
Real trapezoid_area(std::span<const RocPoint> points);

struct MetricsReport {
  std::string method;
  Real threshold = 0.5;
  ConfusionCounts counts;
  std::optional<Real> acc;
  std::optional<Real> tpr;
  std::optional<Real> tnr;
  std::optional<Real> auc;
  std::vector<RocPoint> roc;

  nlohmann::json to_json() const;
  // "method,acc,tpr,tnr[,auc]" row, three decimals, "NA" when undefined.
  std::string csv_row(bool with_auc = true) const;
};

std::string metrics_csv_header(bool with_auc = true);

MetricsReport evaluate_scores(const std::string& method, std::span<const Real> scores,
                              std::span<const int> labels, Real threshold = 0.5);

}  // namespace arvit
