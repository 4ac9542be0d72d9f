#pragma once

#include <array>
#include <span>
#include <vector>

#include "owf/matching.hpp"
#include "owf/teacher.hpp"

namespace owf {

struct LossConfig {
  double alpha = 0.25;
  double gamma = 2.0;
  /// Floor on the L1-norm normalizers of the teacher and pseudo terms.
  double eps = 1e-8;
  /// Supervise unmatched, non-pseudo predictions with all-zero targets.
  bool background_negatives = true;
  /// Differentiate the pseudo-label loss through its soft target (the box
  /// score). When false the target is treated as a constant.
  bool pseudo_target_grad = true;
};

/// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-12;

/// Sigmoid focal loss of probability `p` against soft target `t` in [0,1]:
/// -[α t (1-p)^γ log p + (1-α)(1-t) p^γ log(1-p)].
double focal(double p, double t, double alpha = 0.25, double gamma = 2.0);
/// d focal / d p.
double focal_grad(double p, double t, double alpha = 0.25, double gamma = 2.0);
/// d focal / d t.
double focal_target_grad(double p, double alpha = 0.25, double gamma = 2.0);

struct LossComponents {
  double regression = 0.0;         // L_r
  double box_score = 0.0;          // L_bs
  double cls = 0.0;                // L_cls
  double teacher_regression = 0.0; // L_r^z
  double teacher_box_score = 0.0;  // L_bs^z
  double teacher_cls = 0.0;        // L_cls^z
  double pseudo_cls = 0.0;         // L_cls^p

  double total() const {
    return regression + box_score + cls + teacher_regression + teacher_box_score +
           teacher_cls + pseudo_cls;
  }
  LossComponents& operator+=(const LossComponents& o);
};

/// Gradient of the loss with respect to one prediction's outputs.
struct PredictionGrad {
  std::array<double, 4> box{};
  double box_score = 0.0;
  std::vector<double> cls;
};

struct LossReport {
  LossComponents parts;
  double total = 0.0;
  std::vector<PredictionGrad> grads;

  /// Zero report sized for `preds`.
  static LossReport zeros(std::span<const Prediction> preds);
  /// Adds components and gradients of `other`, then refreshes `total`.
  LossReport& accumulate(const LossReport& other);
};

/// L_r, L_bs and L_cls over ground-truth-matched and background predictions.
LossReport gt_losses(const Assignment& assignment, std::span<const Label> labels,
                     std::span<const Prediction> preds, const LossConfig& cfg = {});

/// The confidence-weighted teacher terms (L_r^z, L_bs^z, L_cls^z) and the
/// pseudo-label term L_cls^p.
LossReport down_weight_losses(const Assignment& assignment, std::span<const Label> labels,
                              std::span<const Prediction> preds, const LossConfig& cfg = {});

/// Sum of all seven components with accumulated gradients. Builds defining
/// OWF_CLOSED_WORLD_ONLY compile the down-weight terms out of this path.
LossReport total_loss(const Assignment& assignment, std::span<const Label> labels,
                      std::span<const Prediction> preds, const LossConfig& cfg = {});

}  // namespace owf
