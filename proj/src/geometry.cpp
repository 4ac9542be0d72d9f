#include "owf/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace owf {

bool Box::is_valid() const {
  auto finite = std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) &&
                std::isfinite(h);
  return finite && cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0 && w > 0.0 &&
         w <= 1.0 && h > 0.0 && h <= 1.0;
}

std::optional<Box> normalize_box(const PixelBox& px, double image_width,
                                 double image_height) {
  if (!(image_width > 0.0) || !(image_height > 0.0)) return std::nullopt;
  double x1 = std::clamp(px.x, 0.0, image_width);
  double y1 = std::clamp(px.y, 0.0, image_height);
  double x2 = std::clamp(px.x + px.w, 0.0, image_width);
  double y2 = std::clamp(px.y + px.h, 0.0, image_height);
  if (!(x2 > x1) || !(y2 > y1)) return std::nullopt;
  Box box;
  box.cx = 0.5 * (x1 + x2) / image_width;
  box.cy = 0.5 * (y1 + y2) / image_height;
  box.w = (x2 - x1) / image_width;
  box.h = (y2 - y1) / image_height;
  return box;
}

PixelBox to_pixels(const Box& box, double image_width, double image_height) {
  return {box.x1() * image_width, box.y1() * image_height, box.w * image_width,
          box.h * image_height};
}

namespace {

struct Overlap {
  double inter = 0.0;
  double uni = 0.0;
  double hull = 0.0;
};

Overlap overlap(const Box& a, const Box& b) {
  double iw = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1()));
  double ih = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1()));
  double cw = std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1());
  double ch = std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1());
  Overlap o;
  o.inter = iw * ih;
  o.uni = a.area() + b.area() - o.inter;
  o.hull = cw * ch;
  return o;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  auto o = overlap(a, b);
  if (o.uni <= 0.0) return 0.0;
  return o.inter / o.uni;
}

double giou(const Box& a, const Box& b) {
  auto o = overlap(a, b);
  double v = o.uni > 0.0 ? o.inter / o.uni : 0.0;
  if (o.hull <= 0.0) return v;
  return v - (o.hull - o.uni) / o.hull;
}

double giou_loss(const Box& a, const Box& b) { return 1.0 - giou(a, b); }

double l1_box_loss(const Box& a, const Box& b) {
  return std::abs(a.cx - b.cx) + std::abs(a.cy - b.cy) + std::abs(a.w - b.w) +
         std::abs(a.h - b.h);
}

namespace {

// Gradient of one axis (x or y) of the overlap quantities, expressed on the
// corner coordinates of both boxes: index 0/1 = a lo/hi, 2/3 = b lo/hi.
struct AxisGrad {
  double extent_inter = 0.0;
  double extent_hull = 0.0;
  std::array<double, 4> d_inter{};
  std::array<double, 4> d_hull{};
};

AxisGrad axis_grad(double alo, double ahi, double blo, double bhi) {
  AxisGrad g;
  double raw = std::min(ahi, bhi) - std::max(alo, blo);
  if (raw > 0.0) {
    g.extent_inter = raw;
    if (ahi <= bhi) g.d_inter[1] = 1.0; else g.d_inter[3] = 1.0;
    if (alo >= blo) g.d_inter[0] = -1.0; else g.d_inter[2] = -1.0;
  }
  g.extent_hull = std::max(ahi, bhi) - std::min(alo, blo);
  if (ahi >= bhi) g.d_hull[1] = 1.0; else g.d_hull[3] = 1.0;
  if (alo <= blo) g.d_hull[0] = -1.0; else g.d_hull[2] = -1.0;
  return g;
}

}  // namespace

BoxPairGrad giou_loss_grad(const Box& a, const Box& b) {
  BoxPairGrad out;
  auto gx = axis_grad(a.x1(), a.x2(), b.x1(), b.x2());
  auto gy = axis_grad(a.y1(), a.y2(), b.y1(), b.y2());
  double inter = gx.extent_inter * gy.extent_inter;
  double hull = gx.extent_hull * gy.extent_hull;
  double uni = a.area() + b.area() - inter;
  if (hull <= 0.0 || uni <= 0.0) {
    out.value = giou_loss(a, b);
    return out;
  }
  // loss = 2 - I/U - U/C with U = Aa + Ab - I
  out.value = 2.0 - inter / uni - uni / hull;
  double d_inter = -(uni + inter) / (uni * uni) + 1.0 / hull;
  double d_area = inter / (uni * uni) - 1.0 / hull;
  double d_hull = uni / (hull * hull);

  // corner gradients: [a.x1, a.x2, b.x1, b.x2] and same for y
  std::array<double, 4> cx{}, cy{};
  for (int k = 0; k < 4; ++k) {
    cx[k] = d_inter * gx.d_inter[k] * gy.extent_inter +
            d_hull * gx.d_hull[k] * gy.extent_hull;
    cy[k] = d_inter * gy.d_inter[k] * gx.extent_inter +
            d_hull * gy.d_hull[k] * gx.extent_hull;
  }
  out.d_a = {cx[0] + cx[1], cy[0] + cy[1], 0.5 * (cx[1] - cx[0]) + d_area * a.h,
             0.5 * (cy[1] - cy[0]) + d_area * a.w};
  out.d_b = {cx[2] + cx[3], cy[2] + cy[3], 0.5 * (cx[3] - cx[2]) + d_area * b.h,
             0.5 * (cy[3] - cy[2]) + d_area * b.w};
  return out;
}

BoxPairGrad l1_box_loss_grad(const Box& a, const Box& b) {
  auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  BoxPairGrad out;
  out.value = l1_box_loss(a, b);
  auto av = a.as_array();
  auto bv = b.as_array();
  for (int k = 0; k < 4; ++k) {
    out.d_a[k] = sign(av[k] - bv[k]);
    out.d_b[k] = -out.d_a[k];
  }
  return out;
}

std::vector<std::size_t> nms(std::span<const ScoredBox> dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return dets[i].score > dets[j].score;
  });
  std::vector<std::size_t> kept;
  for (auto i : order) {
    bool keep = std::all_of(kept.begin(), kept.end(), [&](std::size_t k) {
      return iou(dets[i].box, dets[k].box) < iou_threshold;
    });
    if (keep) kept.push_back(i);
  }
  return kept;
}

}  // namespace owf
