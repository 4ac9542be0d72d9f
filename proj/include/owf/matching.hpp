#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "owf/geometry.hpp"
#include "owf/teacher.hpp"

namespace owf {

/// One query's output: box b, box score bs and independent sigmoid class
/// channels (known classes first, unknown last).
struct Prediction {
  Box box;
  double box_score = 0.0;
  std::vector<double> cls;

  std::size_t unknown_channel() const { return cls.size() - 1; }
};

/// Channel of `cls` a label is scored against: its class for ground truth,
/// the unknown channel for teacher labels.
std::size_t label_channel(const Label& label, std::size_t num_channels);

struct MatchWeights {
  double l1 = 1.0;
  double giou = 1.0;
};

/// l1·|b - b̂|₁ + giou·(1 - GIoU) - cls[channel] - confidence.
double pair_cost(const Label& label, const Prediction& pred, const MatchWeights& w = {});

/// G×N cost matrix, rows = labels, columns = predictions.
Eigen::MatrixXd cost_matrix(std::span<const Label> labels, std::span<const Prediction> preds,
                            const MatchWeights& w = {});

/// Minimum-cost assignment of every row to a distinct column (rows <= cols).
/// Returns the column of each row. Throws ValidationError when rows > cols or
/// an entry is not finite.
std::vector<std::size_t> hungarian(const Eigen::MatrixXd& cost);

struct Assignment {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (label, prediction)
  std::vector<std::size_t> gt;         // predictions matched to ground truth
  std::vector<std::size_t> teacher;    // predictions matched to teacher labels (l_z)
  std::vector<std::size_t> pseudo;     // pseudo-label predictions (l_p)
  std::vector<std::size_t> unmatched;  // every prediction without a label
  std::size_t num_predictions = 0;

  /// Label index matched to prediction `p`, or -1.
  std::vector<long> label_of_prediction() const;
  /// Unmatched predictions that are not pseudo-labels (background).
  std::vector<std::size_t> background() const;
};

Assignment assign(std::span<const Label> labels, std::span<const Prediction> preds,
                  const MatchWeights& w = {});

inline constexpr std::size_t kDefaultPseudoCount = 5;

/// Fills `pseudo` with the min(k, |unmatched|) unmatched predictions of
/// largest box score (ties: lower index), stored in ascending index order.
Assignment select_pseudo(Assignment assignment, std::span<const Prediction> preds,
                         std::size_t k = kDefaultPseudoCount);

/// Same, except that with `overlap_guard` set, unmatched predictions whose
/// box overlaps any label at IoU >= the guard are not candidates. Keeps
/// duplicate detections of labelled objects from becoming unknowns.
Assignment select_pseudo(Assignment assignment, std::span<const Prediction> preds, std::size_t k,
                         std::span<const Label> labels, std::optional<double> overlap_guard);

}  // namespace owf
