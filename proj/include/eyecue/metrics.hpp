#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace eyecue {

/// Counts with distracted as the positive class.
struct Confusion {
  std::int64_t tp = 0;
  std::int64_t fn = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fn + fp + tn; }
  double accuracy() const;
  bool operator==(const Confusion&) const = default;
};

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// Undefined ratios (0/0) are reported as 0.
ClassMetrics distracted_metrics(const Confusion& c);
ClassMetrics attentive_metrics(const Confusion& c);

struct RocPoint {
  double threshold = 0.0;  // score >= threshold counts as distracted
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Sweeps every distinct score from high to low, from (0, 0) to (1, 1).
/// Tied scores move in one step. Labels are class indices (1 = distracted).
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Trapezoidal area; nullopt when either class is absent.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels);
double trapezoid_area(std::span<const RocPoint> roc);

inline constexpr double kDecisionThreshold = 0.5;

/// Predicted distracted when score > threshold.
Confusion confusion_from_scores(std::span<const double> scores, std::span<const int> labels,
                                double threshold = kDecisionThreshold);

struct MetricsReport {
  std::size_t count = 0;
  Confusion confusion;
  double accuracy = 0.0;
  ClassMetrics distracted;
  ClassMetrics attentive;
  std::vector<RocPoint> roc;
  std::optional<double> auc;
  double mean_loss = 0.0;
};

MetricsReport compute_metrics(std::span<const double> scores, std::span<const int> labels,
                              double threshold = kDecisionThreshold);

}  // namespace eyecue
