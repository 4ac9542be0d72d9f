#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace owf {

/// Normalized center-format box. All coordinates are fractions of the image
/// size: cx, cy in [0,1], w, h in (0,1].
struct Box {
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.0;
  double h = 0.0;

  double x1() const { return cx - 0.5 * w; }
  double y1() const { return cy - 0.5 * h; }
  double x2() const { return cx + 0.5 * w; }
  double y2() const { return cy + 0.5 * h; }
  double area() const { return w * h; }

  std::array<double, 4> as_array() const { return {cx, cy, w, h}; }
  static Box from_array(const std::array<double, 4>& v) {
    return {v[0], v[1], v[2], v[3]};
  }

  /// True when the invariants hold (positive extent, center inside image).
  bool is_valid() const;

  friend bool operator==(const Box&, const Box&) = default;
};

/// Absolute top-left xywh box in pixels, as found in COCO-style files.
struct PixelBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;
};

/// Converts an absolute xywh box to normalized cxcywh. The box is clamped to
/// the image first; returns nullopt when nothing of positive area is left.
std::optional<Box> normalize_box(const PixelBox& px, double image_width,
                                 double image_height);

/// Inverse of normalize_box for in-bounds boxes.
PixelBox to_pixels(const Box& box, double image_width, double image_height);

double iou(const Box& a, const Box& b);

/// Generalized IoU in (-1, 1]. A degenerate hull falls back to plain IoU.
double giou(const Box& a, const Box& b);

/// 1 - GIoU, in [0, 2).
double giou_loss(const Box& a, const Box& b);

/// Sum of absolute coordinate differences in normalized space.
double l1_box_loss(const Box& a, const Box& b);

/// Value of a box-pair loss together with its gradient with respect to the
/// (cx, cy, w, h) of both arguments.
struct BoxPairGrad {
  double value = 0.0;
  std::array<double, 4> d_a{};
  std::array<double, 4> d_b{};
};

BoxPairGrad giou_loss_grad(const Box& a, const Box& b);

/// Subgradient of the L1 loss; the sign at an exact tie is taken as zero.
BoxPairGrad l1_box_loss_grad(const Box& a, const Box& b);

struct ScoredBox {
  Box box;
  double score = 0.0;
};

/// Greedy non-maximum suppression. Candidates are visited by descending
/// score (ties: lower index first) and kept when their IoU with every kept
/// box is strictly below `iou_threshold`. Returns kept indices in visit order.
std::vector<std::size_t> nms(std::span<const ScoredBox> dets, double iou_threshold);

}  // namespace owf
