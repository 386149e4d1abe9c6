#include "eyecue/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eyecue/errors.hpp"

namespace eyecue {

namespace {

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

ClassMetrics make_metrics(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  ClassMetrics m;
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
  return m;
}

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ValidationError("metrics: scores and labels differ in length");
  for (int l : labels) {
    if (l != 0 && l != 1) throw ValidationError("metrics: labels must be 0 or 1");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("metrics: non-finite score");
  }
}

}  // namespace

double Confusion::accuracy() const { return ratio(tp + tn, total()); }

ClassMetrics distracted_metrics(const Confusion& c) { return make_metrics(c.tp, c.fp, c.fn); }
ClassMetrics attentive_metrics(const Confusion& c) { return make_metrics(c.tn, c.fn, c.fp); }

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  const auto negatives = static_cast<std::int64_t>(labels.size()) - positives;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> roc{{HUGE_VAL, 0.0, 0.0}};
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
    }
    roc.push_back({s, ratio(fp, negatives), ratio(tp, positives)});
  }
  // With a single class present one axis stays at 0; pin the end at (1, 1).
  roc.back().fpr = 1.0;
  roc.back().tpr = 1.0;
  return roc;
}

double trapezoid_area(std::span<const RocPoint> roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
  }
  return area;
}

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  if (positives == 0 || positives == static_cast<std::int64_t>(labels.size())) return std::nullopt;
  const auto roc = roc_curve(scores, labels);
  return trapezoid_area(roc);
}

Confusion confusion_from_scores(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_inputs(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] > threshold;
    if (labels[i] == 1) {
      (predicted ? c.tp : c.fn) += 1;
    } else {
      (predicted ? c.fp : c.tn) += 1;
    }
  }
  return c;
}

MetricsReport compute_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
  MetricsReport r;
  r.count = scores.size();
  r.confusion = confusion_from_scores(scores, labels, threshold);
  r.accuracy = r.confusion.accuracy();
  r.distracted = distracted_metrics(r.confusion);
  r.attentive = attentive_metrics(r.confusion);
  if (!scores.empty()) r.roc = roc_curve(scores, labels);
  r.auc = roc_auc(scores, labels);
  return r;
}

}  // namespace eyecue
