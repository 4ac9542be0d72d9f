#include "owf/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include <spdlog/spdlog.h>

#include "owf/rng.hpp"

namespace owf {

StepResult compute_step(const DetectorParams& params, const TrainingSample& sample,
                        const TrainOptions& options) {
  auto fwd = forward(params, sample.tokens);
  auto assignment = assign(sample.labels, fwd.predictions, options.match);
  if (options.use_pseudo) {
    assignment = select_pseudo(std::move(assignment), fwd.predictions, options.pseudo_k, sample.labels,
                               options.pseudo_overlap_guard);
  }
  auto loss = total_loss(assignment, sample.labels, fwd.predictions, options.loss);
  auto grad = backward(params, fwd.cache, loss.grads);
  return {std::move(assignment), std::move(loss), std::move(grad)};
}

namespace {

double squared_norm(const DetectorParams& p) {
  double s = 0.0;
  p.visit([&](const std::string&, const Matrix& m) { s += m.squaredNorm(); });
  return s;
}

}  // namespace

TrainResult train(DetectorParams params, std::span<const TrainingSample> samples,
                  const TrainOptions& options) {
  TrainResult result;
  auto m1 = zero_params(params.config);
  auto m2 = zero_params(params.config);
  std::vector<std::size_t> order(samples.size());
  std::size_t t = 0;
  const double total_steps = static_cast<double>(options.epochs * samples.size());

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_stream(options.seed, "shuffle", epoch);
    std::shuffle(order.begin(), order.end(), rng);

    EpochLog entry;
    entry.epoch = epoch;
    for (auto idx : order) {
      auto step = compute_step(params, samples[idx], options);
      double norm2 = squared_norm(step.grad);
      if (!std::isfinite(step.loss.total) || !std::isfinite(norm2)) {
        result.fault = "non-finite loss at epoch " + std::to_string(epoch) + ", sample " +
                       std::to_string(idx);
        spdlog::error("{}; keeping last good parameters", *result.fault);
        result.params = std::move(params);
        return result;
      }
      double scale = 1.0;
      if (options.grad_clip > 0.0 && norm2 > options.grad_clip * options.grad_clip) {
        scale = options.grad_clip / std::sqrt(norm2);
      }
      ++t;
      const double c1 = 1.0 - std::pow(options.beta1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(options.beta2, static_cast<double>(t));
      double lr = options.learning_rate;
      if (options.cosine_schedule) {
        lr *= 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t - 1) / total_steps));
      }
      // All four share one visit order.
      std::vector<Matrix*> g, a, b;
      step.grad.visit([&](const std::string&, Matrix& m) { g.push_back(&m); });
      m1.visit([&](const std::string&, Matrix& m) { a.push_back(&m); });
      m2.visit([&](const std::string&, Matrix& m) { b.push_back(&m); });
      std::size_t k = 0;
      params.visit([&](const std::string&, Matrix& p) {
        Matrix grad = scale * *g[k];
        if (options.optimizer == Optimizer::kSgdMomentum) {
          *a[k] = options.beta1 * *a[k] + grad;
          p -= lr * *a[k];
          ++k;
          return;
        }
        *a[k] = options.beta1 * *a[k] + (1.0 - options.beta1) * grad;
        *b[k] = options.beta2 * *b[k] + (1.0 - options.beta2) * grad.cwiseAbs2();
        p.array() -= lr * (a[k]->array() / c1) /
                     ((b[k]->array() / c2).sqrt() + options.adam_eps);
        ++k;
      });

      entry.mean += step.loss.parts;
    }
    if (!samples.empty()) {
      auto n = static_cast<double>(samples.size());
      auto& m = entry.mean;
      for (double* v : {&m.regression, &m.box_score, &m.cls, &m.teacher_regression,
                        &m.teacher_box_score, &m.teacher_cls, &m.pseudo_cls}) {
        *v /= n;
      }
    }
    entry.mean_total = entry.mean.total();
    spdlog::debug("epoch {}: loss {:.6f}", epoch, entry.mean_total);
    result.log.push_back(entry);
  }
  result.params = std::move(params);
  return result;
}

CascadeDilution measure_dilution(const DetectorParams& params, const TrainingSample& sample,
                                 const TrainOptions& options) {
  auto fwd = forward(params, sample.tokens);
  auto assignment = assign(sample.labels, fwd.predictions, options.match);
  if (options.use_pseudo) {
    assignment = select_pseudo(std::move(assignment), fwd.predictions, options.pseudo_k, sample.labels,
                               options.pseudo_overlap_guard);
  }
  auto loss = total_loss(assignment, sample.labels, fwd.predictions, options.loss);
  for (auto& g : loss.grads) {
    g.box = {};
    g.box_score = 0.0;
  }
  auto grad = backward(params, fwd.cache, loss.grads);
  CascadeDilution out;
  auto stage_norm = [](const StageParams& s) {
    return std::sqrt(s.wq.squaredNorm() + s.wk.squaredNorm() + s.wv.squaredNorm() +
                     s.w1.squaredNorm() + s.b1.squaredNorm() + s.w2.squaredNorm() +
                     s.b2.squaredNorm());
  };
  out.identification_norm = stage_norm(grad.identification);
  out.localization_norm = stage_norm(grad.localization);
  return out;
}

}  // namespace owf
