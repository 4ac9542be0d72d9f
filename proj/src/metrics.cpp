#include "owf/metrics.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace owf {

namespace {

struct DetRef {
  std::size_t image = 0;
  std::size_t det = 0;
  double score = 0.0;
};

// Detections satisfying `pred`, by descending score; ties keep image then
// detection order.
template <typename Pred>
std::vector<DetRef> ranked(const EvalSet& set, Pred pred) {
  std::vector<DetRef> out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t d = 0; d < set[i].detections.size(); ++d) {
      if (pred(set[i].detections[d])) out.push_back({i, d, set[i].detections[d].score});
    }
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const DetRef& a, const DetRef& b) { return a.score > b.score; });
  return out;
}

// Index of the unused eligible box with the highest IoU >= threshold.
template <typename Eligible>
std::optional<std::size_t> best_match(const std::vector<GroundTruth>& gts, const Box& box,
                                      const std::vector<bool>& used, double threshold,
                                      Eligible eligible) {
  std::optional<std::size_t> best;
  double best_iou = threshold;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (used[g] || !eligible(gts[g])) continue;
    double v = iou(gts[g].box, box);
    if (v >= best_iou && (!best || v > best_iou)) {
      best = g;
      best_iou = v;
    }
  }
  return best;
}

std::vector<std::vector<bool>> unused_flags(const EvalSet& set) {
  std::vector<std::vector<bool>> used(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) used[i].assign(set[i].ground_truth.size(), false);
  return used;
}

}  // namespace

double area_under_pr(const std::vector<PrPoint>& curve, ApMode mode) {
  if (mode == ApMode::kElevenPoint) {
    double sum = 0.0;
    for (int k = 0; k <= 10; ++k) {
      double t = k / 10.0;
      double best = 0.0;
      for (const auto& p : curve) {
        if (p.recall >= t) best = std::max(best, p.precision);
      }
      sum += best;
    }
    return sum / 11.0;
  }
  std::vector<double> rec{0.0}, prec{0.0};
  for (const auto& p : curve) {
    rec.push_back(p.recall);
    prec.push_back(p.precision);
  }
  rec.push_back(1.0);
  prec.push_back(0.0);
  for (std::size_t i = prec.size() - 1; i > 0; --i) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double area = 0.0;
  for (std::size_t i = 0; i + 1 < rec.size(); ++i) {
    if (rec[i + 1] != rec[i]) area += (rec[i + 1] - rec[i]) * prec[i + 1];
  }
  return area;
}

ApResult average_precision(const EvalSet& set, ClassId cls, double iou_threshold, ApMode mode) {
  auto eligible = [cls](const GroundTruth& g) { return !g.unknown && g.class_id == cls; };
  std::size_t total = 0;
  for (const auto& im : set) {
    total += static_cast<std::size_t>(
        std::count_if(im.ground_truth.begin(), im.ground_truth.end(), eligible));
  }
  auto used = unused_flags(set);
  ApResult result;
  std::size_t tp = 0, fp = 0;
  for (const auto& ref : ranked(set, [cls](const Detection& d) { return d.label == cls; })) {
    const auto& im = set[ref.image];
    auto m = best_match(im.ground_truth, im.detections[ref.det].box, used[ref.image],
                        iou_threshold, eligible);
    if (m) {
      used[ref.image][*m] = true;
      ++tp;
    } else {
      ++fp;
    }
    if (total > 0) {
      result.curve.push_back({static_cast<double>(tp) / static_cast<double>(total),
                              static_cast<double>(tp) / static_cast<double>(tp + fp)});
    }
  }
  result.counts = {tp, fp, total - tp};
  if (total > 0) result.ap = area_under_pr(result.curve, mode);
  return result;
}

std::optional<double> u_recall(const EvalSet& set, double iou_threshold,
                               const std::optional<std::set<ClassId>>& only) {
  auto counted = [&](const GroundTruth& g) {
    return g.unknown && (!only || only->count(g.class_id) > 0);
  };
  std::size_t total = 0, hit = 0;
  auto used = unused_flags(set);
  for (const auto& ref : ranked(set, [](const Detection& d) { return d.label == kUnknownClass; })) {
    const auto& im = set[ref.image];
    auto m = best_match(im.ground_truth, im.detections[ref.det].box, used[ref.image], iou_threshold,
                        [](const GroundTruth& g) { return g.unknown; });
    if (m) used[ref.image][*m] = true;
  }
  for (std::size_t i = 0; i < set.size(); ++i) {
    for (std::size_t g = 0; g < set[i].ground_truth.size(); ++g) {
      if (!counted(set[i].ground_truth[g])) continue;
      ++total;
      if (used[i][g]) ++hit;
    }
  }
  if (total == 0) return std::nullopt;
  return static_cast<double>(hit) / static_cast<double>(total);
}

WildernessImpact wilderness_impact(const EvalSet& set, double recall_level, double iou_threshold) {
  std::size_t total_known = 0;
  for (const auto& im : set) {
    for (const auto& g : im.ground_truth) total_known += g.unknown ? 0 : 1;
  }
  WildernessImpact wi;
  if (total_known == 0) return wi;

  auto used = unused_flags(set);
  std::size_t tp = 0, fp_closed = 0, fp_open = 0;
  auto snapshot = [&] {
    wi.recall = static_cast<double>(tp) / static_cast<double>(total_known);
    auto closed = tp + fp_closed;
    auto mixed = closed + fp_open;
    wi.precision_known = closed > 0 ? static_cast<double>(tp) / static_cast<double>(closed) : 0.0;
    wi.precision_mixed = mixed > 0 ? static_cast<double>(tp) / static_cast<double>(mixed) : 0.0;
    wi.value = wi.precision_mixed > 0.0 ? wi.precision_known / wi.precision_mixed - 1.0 : 0.0;
  };
  for (const auto& ref : ranked(set, [](const Detection& d) { return d.label != kUnknownClass; })) {
    const auto& im = set[ref.image];
    const auto& det = im.detections[ref.det];
    auto m = best_match(im.ground_truth, det.box, used[ref.image], iou_threshold,
                        [&](const GroundTruth& g) { return !g.unknown && g.class_id == det.label; });
    if (m) {
      used[ref.image][*m] = true;
      ++tp;
    } else {
      bool on_unknown = std::any_of(im.ground_truth.begin(), im.ground_truth.end(), [&](const GroundTruth& g) {
        return g.unknown && iou(g.box, det.box) >= iou_threshold;
      });
      ++(on_unknown ? fp_open : fp_closed);
    }
    if (static_cast<double>(tp) / static_cast<double>(total_known) >= recall_level) {
      snapshot();
      wi.recall_reached = true;
      return wi;
    }
  }
  snapshot();
  return wi;
}

std::size_t a_ose(const EvalSet& set, double iou_threshold, double score_floor) {
  std::size_t count = 0;
  for (const auto& im : set) {
    for (const auto& g : im.ground_truth) {
      if (!g.unknown) continue;
      const Detection* best = nullptr;
      double best_iou = 0.0;
      for (const auto& d : im.detections) {
        if (d.score < score_floor) continue;
        double v = iou(g.box, d.box);
        if (v < iou_threshold) continue;
        if (!best || v > best_iou || (v == best_iou && d.score > best->score)) {
          best = &d;
          best_iou = v;
        }
      }
      if (best && best->label != kUnknownClass) ++count;
    }
  }
  return count;
}

std::optional<double> mean_ap(const std::map<ClassId, ApResult>& per_class,
                              const std::set<ClassId>& classes) {
  double sum = 0.0;
  std::size_t n = 0;
  for (auto c : classes) {
    auto it = per_class.find(c);
    if (it == per_class.end() || !it->second.ap) continue;
    sum += *it->second.ap;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

MetricsReport evaluate(const EvalSet& set, const TaskState& state, const EvalOptions& options,
                       std::string task_name) {
  MetricsReport r;
  r.task = std::move(task_name);
  for (auto c : state.known) r.per_class[c] = average_precision(set, c, options.iou_threshold, options.ap_mode);
  r.map_previous = mean_ap(r.per_class, state.previously_known);
  r.map_current = mean_ap(r.per_class, state.current);
  r.map_both = mean_ap(r.per_class, state.known);
  r.u_recall = u_recall(set, options.iou_threshold);
  r.wi = wilderness_impact(set, options.wi_recall, options.iou_threshold);
  r.a_ose = a_ose(set, options.iou_threshold, options.a_ose_score_floor);
  return r;
}

namespace {

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::string pct(const std::optional<double>& v) {
  return v ? fmt::format("{:.1f}", 100.0 * *v) : std::string("-");
}

}  // namespace

std::string report_json(const MetricsReport& report, const ClassRegistry& registry) {
  nlohmann::json doc;
  doc["task"] = report.task;
  doc["per_class"] = nlohmann::json::array();
  for (const auto& [cls, res] : report.per_class) {
    doc["per_class"].push_back({{"class", registry.name(cls)},
                                {"ap", opt(res.ap)},
                                {"tp", res.counts.tp},
                                {"fp", res.counts.fp},
                                {"fn", res.counts.fn}});
  }
  doc["map"] = {{"previously", opt(report.map_previous)},
                {"current", opt(report.map_current)},
                {"both", opt(report.map_both)}};
  doc["u_recall"] = opt(report.u_recall);
  doc["wi"] = {{"value", report.wi.value},
               {"precision_known", report.wi.precision_known},
               {"precision_mixed", report.wi.precision_mixed},
               {"recall", report.wi.recall},
               {"recall_reached", report.wi.recall_reached}};
  doc["a_ose"] = report.a_ose;
  return doc.dump(2) + "\n";
}

std::string report_table(const std::vector<MetricsReport>& reports) {
  std::string out = fmt::format("{:<12} | {:>8} | {:>10} | {:>8} | {:>8} | {:>8} | {:>6}\n", "Task",
                                "U-Recall", "Previously", "Current", "Both", "WI", "A-OSE");
  out += fmt::format("{:<12} | {:>8} | {:^32} | {:>8} | {:>6}\n", "", "", "mAP", "", "");
  out += std::string(out.find('\n'), '-') + "\n";
  for (const auto& r : reports) {
    out += fmt::format("{:<12} | {:>8} | {:>10} | {:>8} | {:>8} | {:>8.4f} | {:>6}\n", r.task,
                       pct(r.u_recall), pct(r.map_previous), pct(r.map_current), pct(r.map_both),
                       r.wi.value, r.a_ose);
  }
  return out;
}

std::string report_csv(const MetricsReport& report, const ClassRegistry& registry) {
  std::string out = "task,class,ap,tp,fp,fn\n";
  for (const auto& [cls, res] : report.per_class) {
    out += fmt::format("{},{},{},{},{},{}\n", report.task, registry.name(cls),
                       res.ap ? fmt::format("{:.6f}", *res.ap) : std::string(), res.counts.tp,
                       res.counts.fp, res.counts.fn);
  }
  return out;
}

std::string pr_curve_svg(const MetricsReport& report, const ClassRegistry& registry) {
  constexpr double kW = 480, kH = 360, kPad = 40;
  static constexpr const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                             "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "<line x1=\"{2}\" y1=\"{3}\" x2=\"{4}\" y2=\"{3}\" stroke=\"black\"/>\n"
      "<line x1=\"{2}\" y1=\"{2}\" x2=\"{2}\" y2=\"{3}\" stroke=\"black\"/>\n"
      "<text x=\"{5}\" y=\"{6}\" font-size=\"12\">recall</text>\n"
      "<text x=\"4\" y=\"{2}\" font-size=\"12\">precision</text>\n",
      kW, kH, kPad, kH - kPad, kW - kPad, kW / 2, kH - 8);
  std::size_t k = 0;
  for (const auto& [cls, res] : report.per_class) {
    const char* color = kPalette[k % std::size(kPalette)];
    std::string pts;
    for (const auto& p : res.curve) {
      pts += fmt::format("{:.2f},{:.2f} ", kPad + p.recall * (kW - 2 * kPad),
                         kH - kPad - p.precision * (kH - 2 * kPad));
    }
    svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" points=\"{}\"/>\n", color, pts);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"{}\">{}</text>\n", kW - kPad + 2,
                       kPad + 12.0 * static_cast<double>(k), color, registry.name(cls));
    ++k;
  }
  svg += "</svg>\n";
  return svg;
}

}  // namespace owf
