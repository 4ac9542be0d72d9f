#include "owf/teacher.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "owf/error.hpp"
#include "owf/json_util.hpp"

namespace owf {

using nlohmann::json;

TeacherDump parse_teacher(const std::string& jsonl, const Dataset& images) {
  TeacherDump dump;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  std::size_t rejected = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto rec = parse_json(line, "teacher dump", line_no - 1);
    TeacherDetection det;
    std::vector<double> bbox;
    try {
      det.image_id = rec.at("image_id").get<ImageId>();
      det.category = rec.at("category").get<std::string>();
      bbox = rec.at("bbox").get<std::vector<double>>();
      det.score = rec.at("score").get<double>();
    } catch (const json::exception& e) {
      throw ParseError("teacher dump: line " + std::to_string(line_no) + ": " + e.what(),
                       line_no);
    }
    if (bbox.size() != 4) {
      throw ParseError("teacher dump: line " + std::to_string(line_no) +
                           ": bbox must have 4 numbers",
                       line_no);
    }
    if (!(det.score > 0.0 && det.score <= 1.0)) {
      spdlog::warn("teacher dump line {}: score {} outside (0,1]; record rejected", line_no,
                   det.score);
      ++rejected;
      continue;
    }
    const auto* info = images.image(det.image_id);
    if (info == nullptr) {
      spdlog::warn("teacher dump line {}: unknown image {}; record rejected", line_no,
                   det.image_id);
      ++rejected;
      continue;
    }
    auto box = normalize_box({bbox[0], bbox[1], bbox[2], bbox[3]}, info->width, info->height);
    if (!box) {
      spdlog::warn("teacher dump line {}: empty box after clamping; record rejected", line_no);
      ++rejected;
      continue;
    }
    det.box = *box;
    dump[det.image_id].push_back(std::move(det));
  }
  if (rejected > 0) spdlog::warn("teacher dump: {} records rejected", rejected);
  sort_by_score(dump);
  return dump;
}

TeacherDump load_teacher(const std::filesystem::path& path, const Dataset& images) {
  return parse_teacher(read_text_file(path), images);
}

void sort_by_score(TeacherDump& dump) {
  for (auto& [id, dets] : dump) {
    std::stable_sort(dets.begin(), dets.end(),
                     [](const TeacherDetection& a, const TeacherDetection& b) {
                       return a.score > b.score;
                     });
  }
}

SynonymMap load_synonyms(const std::filesystem::path& path) {
  auto doc = parse_json(read_text_file(path), "synonym map");
  return json_schema_guard("synonym map", [&] {
    SynonymMap out;
    for (const auto& [k, v] : doc.items()) out[to_lower(k)] = v.get<std::string>();
    return out;
  });
}

namespace {

bool names_known_class(const std::string& teacher_name, const ClassRegistry& registry,
                       const TaskState& state, const SynonymMap& synonyms) {
  auto key = to_lower(teacher_name);
  auto syn = synonyms.find(key);
  const auto& target = syn == synonyms.end() ? key : syn->second;
  auto id = registry.find(target);
  return id && state.is_known(*id);
}

}  // namespace

std::vector<Label> align_image(const std::vector<TeacherDetection>& dets,
                               const ClassRegistry& registry, const TaskState& state,
                               const std::vector<Annotation>& ground_truth,
                               const AlignOptions& options) {
  std::vector<ScoredBox> candidates;
  std::vector<const TeacherDetection*> source;
  for (const auto& d : dets) {
    if (d.score < options.score_floor) continue;
    candidates.push_back({d.box, d.score});
    source.push_back(&d);
  }
  std::vector<Label> out;
  for (auto k : nms(candidates, options.nms_threshold)) {
    const auto& det = *source[k];
    if (names_known_class(det.category, registry, state, options.synonyms)) continue;
    if (options.gt_suppress_threshold) {
      bool covered = std::any_of(ground_truth.begin(), ground_truth.end(), [&](const Annotation& a) {
        return iou(a.box, det.box) >= *options.gt_suppress_threshold;
      });
      if (covered) continue;
    }
    out.push_back(Label::teacher(det.box, det.score));
  }
  return out;
}

LabelMap align(const TeacherDump& dump, const ClassRegistry& registry, const TaskState& state,
               const Dataset& ground_truth, const AlignOptions& options) {
  static const std::vector<Annotation> kNoAnnotations;
  LabelMap out;
  for (const auto& [image_id, dets] : dump) {
    auto gt = ground_truth.annotations.find(image_id);
    const auto& anns = gt == ground_truth.annotations.end() ? kNoAnnotations : gt->second;
    out[image_id] = align_image(dets, registry, state, anns, options);
  }
  return out;
}

std::vector<Label> merge(const std::vector<Annotation>& ground_truth,
                         const std::vector<Label>& teacher_labels) {
  std::vector<Label> out;
  out.reserve(ground_truth.size() + teacher_labels.size());
  for (const auto& a : ground_truth) out.push_back(Label::ground_truth(a.class_id, a.box));
  out.insert(out.end(), teacher_labels.begin(), teacher_labels.end());
  return out;
}

LabelMap merge(const Dataset& ground_truth, const LabelMap& teacher_labels) {
  static const std::vector<Label> kNoLabels;
  LabelMap out;
  for (const auto& im : ground_truth.images) {
    auto gt = ground_truth.annotations.find(im.id);
    auto tl = teacher_labels.find(im.id);
    out[im.id] = merge(gt == ground_truth.annotations.end() ? std::vector<Annotation>{} : gt->second,
                       tl == teacher_labels.end() ? kNoLabels : tl->second);
  }
  return out;
}

std::string dump_labels(const LabelMap& labels, const ClassRegistry& registry) {
  std::string out;
  for (const auto& [image_id, list] : labels) {
    json rec;
    rec["image_id"] = image_id;
    rec["labels"] = json::array();
    for (const auto& l : list) {
      rec["labels"].push_back(
          {{"class", l.class_id == kUnknownClass ? std::string("unknown") : registry.name(l.class_id)},
           {"bbox", {l.box.cx, l.box.cy, l.box.w, l.box.h}},
           {"confidence", l.confidence},
           {"source", l.source == LabelSource::kGroundTruth ? "ground_truth" : "teacher"}});
    }
    out += rec.dump();
    out += '\n';
  }
  return out;
}

}  // namespace owf
