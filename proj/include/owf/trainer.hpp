#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "owf/detector.hpp"
#include "owf/losses.hpp"
#include "owf/matching.hpp"

namespace owf {

struct TrainingSample {
  SceneTokens tokens;
  std::vector<Label> labels;  // ground truth first, then teacher labels
};

enum class Optimizer { kAdam, kSgdMomentum };

struct TrainOptions {
  std::size_t epochs = 60;
  Optimizer optimizer = Optimizer::kAdam;
  double learning_rate = 2e-3;
  double beta1 = 0.9;  // Adam first moment, or the SGD momentum
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Cosine decay of the learning rate to zero over all steps.
  bool cosine_schedule = true;
  /// Global gradient-norm clip per step; 0 disables clipping.
  double grad_clip = 5.0;
  MatchWeights match;
  LossConfig loss;
  bool use_pseudo = true;
  std::size_t pseudo_k = kDefaultPseudoCount;
  /// Unmatched predictions overlapping a label at IoU >= this are not
  /// pseudo-label candidates; nullopt disables the guard.
  std::optional<double> pseudo_overlap_guard = 0.1;
  std::uint64_t seed = 0;  // drives the per-epoch sample order
};

/// Everything a single optimisation step computes for one scene.
struct StepResult {
  Assignment assignment;
  LossReport loss;
  DetectorParams grad;
};

/// forward -> assign -> select_pseudo -> total_loss -> backward.
StepResult compute_step(const DetectorParams& params, const TrainingSample& sample,
                        const TrainOptions& options);

struct EpochLog {
  std::size_t epoch = 0;
  LossComponents mean;
  double mean_total = 0.0;
};

struct TrainResult {
  DetectorParams params;  // last good parameters
  std::vector<EpochLog> log;
  /// Set when training stopped on a non-finite loss or parameter.
  std::optional<std::string> fault;
};

/// One optimizer step per scene, deterministic for a fixed seed.
TrainResult train(DetectorParams params, std::span<const TrainingSample> samples,
                  const TrainOptions& options);

/// Classification-gradient norms reaching each stage, for inspecting how
/// much of the identification signal arrives at the localization stage.
struct CascadeDilution {
  double identification_norm = 0.0;
  double localization_norm = 0.0;
};
CascadeDilution measure_dilution(const DetectorParams& params, const TrainingSample& sample,
                                 const TrainOptions& options);

}  // namespace owf
