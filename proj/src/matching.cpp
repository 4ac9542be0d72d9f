#include "owf/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "owf/error.hpp"

namespace owf {

std::size_t label_channel(const Label& label, std::size_t num_channels) {
  if (label.class_id == kUnknownClass) return num_channels - 1;
  auto c = static_cast<std::size_t>(label.class_id);
  if (label.class_id < 0 || c + 1 >= num_channels) {
    throw ValidationError("label class " + std::to_string(label.class_id) +
                          " has no known channel among " + std::to_string(num_channels));
  }
  return c;
}

double pair_cost(const Label& label, const Prediction& pred, const MatchWeights& w) {
  double regression = w.l1 * l1_box_loss(pred.box, label.box) + w.giou * giou_loss(pred.box, label.box);
  return regression - pred.cls[label_channel(label, pred.cls.size())] - label.confidence;
}

Eigen::MatrixXd cost_matrix(std::span<const Label> labels, std::span<const Prediction> preds,
                            const MatchWeights& w) {
  Eigen::MatrixXd cost(static_cast<Eigen::Index>(labels.size()),
                       static_cast<Eigen::Index>(preds.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    for (std::size_t j = 0; j < preds.size(); ++j) {
      cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          pair_cost(labels[i], preds[j], w);
    }
  }
  return cost;
}

std::vector<std::size_t> hungarian(const Eigen::MatrixXd& cost) {
  const auto rows = static_cast<std::size_t>(cost.rows());
  const auto cols = static_cast<std::size_t>(cost.cols());
  if (rows > cols) {
    throw ValidationError("more labels (" + std::to_string(rows) + ") than predictions (" +
                          std::to_string(cols) + ")");
  }
  if (!cost.allFinite()) throw ValidationError("cost matrix has non-finite entries");
  if (rows == 0) return {};

  // Shortest augmenting paths with row/column potentials; 1-based with a
  // virtual column 0 holding the row being inserted.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(rows + 1, 0.0), v(cols + 1, 0.0);
  std::vector<std::size_t> owner(cols + 1, 0), way(cols + 1, 0);
  for (std::size_t i = 1; i <= rows; ++i) {
    owner[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(cols + 1, kInf);
    std::vector<bool> used(cols + 1, false);
    do {
      used[j0] = true;
      std::size_t i0 = owner[j0], j1 = 0;
      double delta = kInf;
      for (std::size_t j = 1; j <= cols; ++j) {
        if (used[j]) continue;
        double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) -
                     u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= cols; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      std::size_t j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  std::vector<std::size_t> col_of_row(rows);
  for (std::size_t j = 1; j <= cols; ++j) {
    if (owner[j] != 0) col_of_row[owner[j] - 1] = j - 1;
  }
  return col_of_row;
}

std::vector<long> Assignment::label_of_prediction() const {
  std::vector<long> out(num_predictions, -1);
  for (auto [label, pred] : pairs) out[pred] = static_cast<long>(label);
  return out;
}

std::vector<std::size_t> Assignment::background() const {
  std::vector<std::size_t> out;
  std::set_difference(unmatched.begin(), unmatched.end(), pseudo.begin(), pseudo.end(),
                      std::back_inserter(out));
  return out;
}

Assignment assign(std::span<const Label> labels, std::span<const Prediction> preds,
                  const MatchWeights& w) {
  Assignment out;
  out.num_predictions = preds.size();
  auto cols = hungarian(cost_matrix(labels, preds, w));
  std::vector<bool> matched(preds.size(), false);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out.pairs.emplace_back(i, cols[i]);
    matched[cols[i]] = true;
    (labels[i].source == LabelSource::kTeacher ? out.teacher : out.gt).push_back(cols[i]);
  }
  std::sort(out.gt.begin(), out.gt.end());
  std::sort(out.teacher.begin(), out.teacher.end());
  for (std::size_t j = 0; j < preds.size(); ++j) {
    if (!matched[j]) out.unmatched.push_back(j);
  }
  return out;
}

Assignment select_pseudo(Assignment assignment, std::span<const Prediction> preds,
                         std::size_t k) {
  return select_pseudo(std::move(assignment), preds, k, {}, std::nullopt);
}

Assignment select_pseudo(Assignment assignment, std::span<const Prediction> preds, std::size_t k,
                         std::span<const Label> labels, std::optional<double> overlap_guard) {
  std::vector<std::size_t> ranked;
  for (auto p : assignment.unmatched) {
    bool covered = overlap_guard && std::any_of(labels.begin(), labels.end(), [&](const Label& l) {
                     return iou(l.box, preds[p].box) >= *overlap_guard;
                   });
    if (!covered) ranked.push_back(p);
  }
  std::stable_sort(ranked.begin(), ranked.end(), [&](std::size_t a, std::size_t b) {
    return preds[a].box_score > preds[b].box_score;
  });
  ranked.resize(std::min(k, ranked.size()));
  std::sort(ranked.begin(), ranked.end());
  assignment.pseudo = std::move(ranked);
  return assignment;
}

}  // namespace owf
