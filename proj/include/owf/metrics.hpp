#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "owf/detection.hpp"
#include "owf/protocol.hpp"

namespace owf {

struct GroundTruth {
  ClassId class_id = 0;  // registry id, also for unknown objects
  Box box;
  bool unknown = false;  // class not known at evaluation time
};

struct EvalImage {
  ImageId id = 0;
  std::vector<GroundTruth> ground_truth;
  std::vector<Detection> detections;
};

using EvalSet = std::vector<EvalImage>;

enum class ApMode { kAllPoint, kElevenPoint };

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

struct ClassCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
};

struct ApResult {
  std::optional<double> ap;  // nullopt when the class has no ground truth
  std::vector<PrPoint> curve;
  ClassCounts counts;
};

/// AP of one known class. Detections are visited by descending score (ties
/// keep input order) and matched to the unmatched same-class ground truth of
/// highest IoU >= iou_threshold.
ApResult average_precision(const EvalSet& set, ClassId cls, double iou_threshold = 0.5,
                           ApMode mode = ApMode::kAllPoint);

/// Area under the monotone precision envelope of a PR curve.
double area_under_pr(const std::vector<PrPoint>& curve, ApMode mode);

/// Fraction of unknown ground truth matched (IoU >= threshold, greedy by
/// score) by detections labelled unknown. Matching uses every unknown box;
/// the rate is counted over boxes whose class is in `only` when given.
/// nullopt when there is nothing to count.
std::optional<double> u_recall(const EvalSet& set, double iou_threshold = 0.5,
                               const std::optional<std::set<ClassId>>& only = std::nullopt);

struct WildernessImpact {
  double value = 0.0;             // P_K / P_{K∪U} - 1
  double precision_known = 0.0;   // P_K
  double precision_mixed = 0.0;   // P_{K∪U}
  double recall = 0.0;            // recall at the operating point
  bool recall_reached = false;    // false: reported at the maximum recall
};

/// Known-class detections are pooled by descending score. At the first
/// point reaching `recall_level`, P_K ignores detections that only hit
/// unknown objects while P_{K∪U} counts them as false positives.
WildernessImpact wilderness_impact(const EvalSet& set, double recall_level = 0.8,
                                   double iou_threshold = 0.5);

/// Unknown ground-truth boxes whose best-overlapping detection (IoU >=
/// threshold, score >= score_floor) carries a known label.
std::size_t a_ose(const EvalSet& set, double iou_threshold = 0.5, double score_floor = 0.0);

struct EvalOptions {
  double iou_threshold = 0.5;
  ApMode ap_mode = ApMode::kAllPoint;
  double wi_recall = 0.8;
  double a_ose_score_floor = 0.0;
};

struct MetricsReport {
  std::string task;
  std::map<ClassId, ApResult> per_class;
  std::optional<double> map_previous;
  std::optional<double> map_current;
  std::optional<double> map_both;
  std::optional<double> u_recall;
  WildernessImpact wi;
  std::size_t a_ose = 0;
};

/// Mean of the defined APs among `classes`.
std::optional<double> mean_ap(const std::map<ClassId, ApResult>& per_class,
                              const std::set<ClassId>& classes);

MetricsReport evaluate(const EvalSet& set, const TaskState& state, const EvalOptions& options = {},
                       std::string task_name = {});

/// Machine-readable report (stable key order, no timestamps).
std::string report_json(const MetricsReport& report, const ClassRegistry& registry);
/// Aligned text table: Task | U-Recall | mAP Previously | Current | Both | WI | A-OSE.
std::string report_table(const std::vector<MetricsReport>& reports);
std::string report_csv(const MetricsReport& report, const ClassRegistry& registry);
/// Precision-recall curves of every class as a standalone SVG.
std::string pr_curve_svg(const MetricsReport& report, const ClassRegistry& registry);

}  // namespace owf
