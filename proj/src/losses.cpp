#include "owf/losses.hpp"

#include <algorithm>
#include <cmath>

namespace owf {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

bool inside_clamp(double p) { return p > kProbClamp && p < 1.0 - kProbClamp; }

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

double focal(double p, double t, double alpha, double gamma) {
  p = clamp_prob(p);
  return -(alpha * t * std::pow(1.0 - p, gamma) * std::log(p) +
           (1.0 - alpha) * (1.0 - t) * std::pow(p, gamma) * std::log(1.0 - p));
}

double focal_grad(double p, double t, double alpha, double gamma) {
  if (!inside_clamp(p)) return 0.0;
  double pos = alpha * t;
  double neg = (1.0 - alpha) * (1.0 - t);
  double q = 1.0 - p;
  double d_pos = -gamma * std::pow(q, gamma - 1.0) * std::log(p) + std::pow(q, gamma) / p;
  double d_neg = gamma * std::pow(p, gamma - 1.0) * std::log(q) - std::pow(p, gamma) / q;
  return -(pos * d_pos + neg * d_neg);
}

double focal_target_grad(double p, double alpha, double gamma) {
  p = clamp_prob(p);
  return -alpha * std::pow(1.0 - p, gamma) * std::log(p) +
         (1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

LossComponents& LossComponents::operator+=(const LossComponents& o) {
  regression += o.regression;
  box_score += o.box_score;
  cls += o.cls;
  teacher_regression += o.teacher_regression;
  teacher_box_score += o.teacher_box_score;
  teacher_cls += o.teacher_cls;
  pseudo_cls += o.pseudo_cls;
  return *this;
}

LossReport LossReport::zeros(std::span<const Prediction> preds) {
  LossReport r;
  r.grads.resize(preds.size());
  for (std::size_t j = 0; j < preds.size(); ++j) r.grads[j].cls.assign(preds[j].cls.size(), 0.0);
  return r;
}

LossReport& LossReport::accumulate(const LossReport& other) {
  parts += other.parts;
  for (std::size_t j = 0; j < grads.size() && j < other.grads.size(); ++j) {
    for (int k = 0; k < 4; ++k) grads[j].box[k] += other.grads[j].box[k];
    grads[j].box_score += other.grads[j].box_score;
    for (std::size_t c = 0; c < grads[j].cls.size(); ++c) grads[j].cls[c] += other.grads[j].cls[c];
  }
  total = parts.total();
  return *this;
}

namespace {

// Adds scale * (l1 + giou_loss)(pred, label) and its gradient; returns the
// unscaled regression value.
double add_regression(const Box& pred, const Box& label, double scale, PredictionGrad& g) {
  auto l1 = l1_box_loss_grad(pred, label);
  auto gi = giou_loss_grad(pred, label);
  for (int k = 0; k < 4; ++k) g.box[k] += scale * (l1.d_a[k] + gi.d_a[k]);
  return l1.value + gi.value;
}

// Focal over every class channel against `target`, scaled by `scale`.
double add_cls_focal(const Prediction& pred, const std::vector<double>& target, double scale,
                     const LossConfig& cfg, PredictionGrad& g) {
  double sum = 0.0;
  for (std::size_t c = 0; c < pred.cls.size(); ++c) {
    sum += focal(pred.cls[c], target[c], cfg.alpha, cfg.gamma);
    g.cls[c] += scale * focal_grad(pred.cls[c], target[c], cfg.alpha, cfg.gamma);
  }
  return sum;
}

}  // namespace

LossReport gt_losses(const Assignment& assignment, std::span<const Label> labels,
                     std::span<const Prediction> preds, const LossConfig& cfg) {
  auto report = LossReport::zeros(preds);
  const double n_gt = static_cast<double>(assignment.gt.size());
  const double norm = std::max(1.0, n_gt);

  for (auto [li, pj] : assignment.pairs) {
    const auto& label = labels[li];
    if (label.source != LabelSource::kGroundTruth) continue;
    const auto& pred = preds[pj];
    auto& g = report.grads[pj];
    report.parts.regression += add_regression(pred.box, label.box, 1.0 / n_gt, g) / n_gt;

    report.parts.box_score += focal(pred.box_score, 1.0, cfg.alpha, cfg.gamma) / norm;
    g.box_score += focal_grad(pred.box_score, 1.0, cfg.alpha, cfg.gamma) / norm;

    std::vector<double> target(pred.cls.size(), 0.0);
    target[label_channel(label, pred.cls.size())] = 1.0;
    report.parts.cls += add_cls_focal(pred, target, 1.0 / norm, cfg, g) / norm;
  }

  if (cfg.background_negatives) {
    for (auto pj : assignment.background()) {
      const auto& pred = preds[pj];
      auto& g = report.grads[pj];
      report.parts.box_score += focal(pred.box_score, 0.0, cfg.alpha, cfg.gamma) / norm;
      g.box_score += focal_grad(pred.box_score, 0.0, cfg.alpha, cfg.gamma) / norm;
      std::vector<double> zeros(pred.cls.size(), 0.0);
      report.parts.cls += add_cls_focal(pred, zeros, 1.0 / norm, cfg, g) / norm;
    }
  }
  report.total = report.parts.total();
  return report;
}

namespace {

// sum / max(eps, Σ x) where the caller has accumulated d(sum)/dx into the
// numerator gradient slots; rescales them and adds the denominator term.
struct NormalizedSum {
  double numerator = 0.0;
  double denominator = 0.0;
};

}  // namespace

LossReport down_weight_losses(const Assignment& assignment, std::span<const Label> labels,
                              std::span<const Prediction> preds, const LossConfig& cfg) {
  auto report = LossReport::zeros(preds);
  auto label_of = assignment.label_of_prediction();

  if (!assignment.teacher.empty()) {
    const double n_z = static_cast<double>(assignment.teacher.size());
    NormalizedSum bs, cls;
    for (auto pj : assignment.teacher) {
      bs.denominator += std::abs(preds[pj].box_score);
      for (double v : preds[pj].cls) cls.denominator += std::abs(v);
    }
    const bool bs_floored = !(bs.denominator > cfg.eps);
    const bool cls_floored = !(cls.denominator > cfg.eps);
    const double bs_den = std::max(cfg.eps, bs.denominator);
    const double cls_den = std::max(cfg.eps, cls.denominator);

    for (auto pj : assignment.teacher) {
      const auto& pred = preds[pj];
      const auto& label = labels[static_cast<std::size_t>(label_of[pj])];
      const double s = label.confidence;
      auto& g = report.grads[pj];

      report.parts.teacher_regression += s * add_regression(pred.box, label.box, s / n_z, g) / n_z;

      bs.numerator += focal(pred.box_score, s, cfg.alpha, cfg.gamma);
      g.box_score += focal_grad(pred.box_score, s, cfg.alpha, cfg.gamma) / bs_den;

      std::vector<double> target(pred.cls.size(), 0.0);
      target[pred.unknown_channel()] = s;
      cls.numerator += add_cls_focal(pred, target, 1.0 / cls_den, cfg, g);
    }
    report.parts.teacher_box_score = bs.numerator / bs_den;
    report.parts.teacher_cls = cls.numerator / cls_den;
    for (auto pj : assignment.teacher) {
      auto& g = report.grads[pj];
      if (!bs_floored) {
        g.box_score -= bs.numerator / (bs_den * bs_den) * sign(preds[pj].box_score);
      }
      if (!cls_floored) {
        for (std::size_t c = 0; c < g.cls.size(); ++c) {
          g.cls[c] -= cls.numerator / (cls_den * cls_den) * sign(preds[pj].cls[c]);
        }
      }
    }
  }

  if (!assignment.pseudo.empty()) {
    NormalizedSum cls;
    for (auto pj : assignment.pseudo) {
      for (double v : preds[pj].cls) cls.denominator += std::abs(v);
    }
    const bool floored = !(cls.denominator > cfg.eps);
    const double den = std::max(cfg.eps, cls.denominator);
    for (auto pj : assignment.pseudo) {
      const auto& pred = preds[pj];
      auto& g = report.grads[pj];
      std::vector<double> target(pred.cls.size(), 0.0);
      const auto unk = pred.unknown_channel();
      target[unk] = pred.box_score;
      cls.numerator += add_cls_focal(pred, target, 1.0 / den, cfg, g);
      if (cfg.pseudo_target_grad) {
        // only the unknown channel's target depends on bs
        g.box_score += focal_target_grad(pred.cls[unk], cfg.alpha, cfg.gamma) / den;
      }
    }
    report.parts.pseudo_cls = cls.numerator / den;
    if (!floored) {
      for (auto pj : assignment.pseudo) {
        auto& g = report.grads[pj];
        for (std::size_t c = 0; c < g.cls.size(); ++c) {
          g.cls[c] -= cls.numerator / (den * den) * sign(preds[pj].cls[c]);
        }
      }
    }
  }
  report.total = report.parts.total();
  return report;
}

LossReport total_loss(const Assignment& assignment, std::span<const Label> labels,
                      std::span<const Prediction> preds, const LossConfig& cfg) {
  auto report = gt_losses(assignment, labels, preds, cfg);
#ifndef OWF_CLOSED_WORLD_ONLY
  if (!assignment.teacher.empty() || !assignment.pseudo.empty()) {
    report.accumulate(down_weight_losses(assignment, labels, preds, cfg));
  }
#endif
  report.total = report.parts.total();
  return report;
}

}  // namespace owf
