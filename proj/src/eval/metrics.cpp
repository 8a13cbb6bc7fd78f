#include "arvit/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "arvit/core/errors.hpp"

namespace arvit {

namespace {

void check_inputs(std::span<const Real> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw ContractError("metrics: " + std::to_string(scores.size()) + " scores for " +
                        std::to_string(labels.size()) + " labels");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw InputError("metrics: label " + std::to_string(y) + " not in {0,1}");
  }
  for (Real s : scores) {
    if (!std::isfinite(s)) throw InputError("metrics: non-finite score");
  }
}

std::optional<Real> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<Real>(num) / static_cast<Real>(den);
}

std::string format_metric(const std::optional<Real>& v) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", *v);
  return buf;
}

nlohmann::json optional_json(const std::optional<Real>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

ConfusionCounts confusion(std::span<const Real> scores, std::span<const int> labels, Real threshold) {
  check_inputs(scores, labels);
  ConfusionCounts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool positive = scores[i] >= threshold;
    if (labels[i] == 1) {
      positive ? ++c.tp : ++c.fn;
    } else {
      positive ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

std::optional<Real> accuracy(const ConfusionCounts& c) { return ratio(c.tp + c.tn, c.total()); }
std::optional<Real> true_positive_rate(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn); }
std::optional<Real> true_negative_rate(const ConfusionCounts& c) { return ratio(c.tn, c.tn + c.fp); }

std::optional<RocCurve> roc_auc(std::span<const Real> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const std::size_t n = scores.size();
  const std::size_t pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks, 1-based.
  Real rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const Real midrank = 0.5 * static_cast<Real>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) rank_sum += midrank;
    i = j;
  }
  const Real np = static_cast<Real>(pos), nn = static_cast<Real>(neg);
  RocCurve curve;
  curve.auc = (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);

  // Sweep thresholds from the highest score down.
  curve.points.push_back({std::numeric_limits<Real>::infinity(), 0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = n; i > 0;) {
    std::size_t j = i;
    const Real t = scores[order[i - 1]];
    while (j > 0 && scores[order[j - 1]] == t) {
      labels[order[j - 1]] == 1 ? ++tp : ++fp;
      --j;
    }
    curve.points.push_back({t, static_cast<Real>(fp) / nn, static_cast<Real>(tp) / np});
    i = j;
  }
  return curve;
}

Real trapezoid_area(std::span<const RocPoint> points) {
  Real area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
  }
  return area;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json roc_points = nlohmann::json::array();
  for (const RocPoint& p : roc) {
    roc_points.push_back({{"threshold", std::isinf(p.threshold) ? nlohmann::json("inf") : nlohmann::json(p.threshold)},
                          {"fpr", p.fpr},
                          {"tpr", p.tpr}});
  }
  return {{"method", method},
          {"threshold", threshold},
          {"counts", {{"tp", counts.tp}, {"tn", counts.tn}, {"fp", counts.fp}, {"fn", counts.fn}}},
          {"acc", optional_json(acc)},
          {"tpr", optional_json(tpr)},
          {"tnr", optional_json(tnr)},
          {"auc", optional_json(auc)},
          {"roc", roc_points}};
}

std::string MetricsReport::csv_row(bool with_auc) const {
  std::string row = method + "," + format_metric(acc) + "," + format_metric(tpr) + "," + format_metric(tnr);
  if (with_auc) row += "," + format_metric(auc);
  return row;
}

std::string metrics_csv_header(bool with_auc) {
  return with_auc ? "method,acc,tpr,tnr,auc" : "method,acc,tpr,tnr";
}

MetricsReport evaluate_scores(const std::string& method, std::span<const Real> scores,
                              std::span<const int> labels, Real threshold) {
  MetricsReport r;
  r.method = method;
  r.threshold = threshold;
  r.counts = confusion(scores, labels, threshold);
  r.acc = accuracy(r.counts);
  r.tpr = true_positive_rate(r.counts);
  r.tnr = true_negative_rate(r.counts);
  if (auto curve = roc_auc(scores, labels)) {
    r.auc = curve->auc;
    r.roc = std::move(curve->points);
  }
  return r;
}

}  // namespace arvit
