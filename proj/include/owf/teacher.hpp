#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "owf/geometry.hpp"
#include "owf/protocol.hpp"

namespace owf {

/// One detection produced by the grounded language-image teacher, in the
/// teacher's own vocabulary.
struct TeacherDetection {
  ImageId image_id = 0;
  std::string category;
  Box box;
  double score = 0.0;  // in (0, 1]
};

using TeacherDump = std::map<ImageId, std::vector<TeacherDetection>>;

enum class LabelSource { kGroundTruth, kTeacher };

/// Supervision target. Ground-truth labels carry confidence 1 and a known
/// class; teacher labels carry kUnknownClass and the teacher's score.
struct Label {
  ClassId class_id = 0;
  Box box;
  double confidence = 1.0;
  LabelSource source = LabelSource::kGroundTruth;

  static Label ground_truth(ClassId id, const Box& box) {
    return {id, box, 1.0, LabelSource::kGroundTruth};
  }
  static Label teacher(const Box& box, double confidence) {
    return {kUnknownClass, box, confidence, LabelSource::kTeacher};
  }
};

using LabelMap = std::map<ImageId, std::vector<Label>>;

/// Parses the JSONL teacher dump. Boxes are absolute pixels and are
/// normalized with the image sizes from `images`. Records with a score
/// outside (0,1], an unknown image or an empty box are skipped with a
/// warning; malformed lines raise ParseError with the line number.
TeacherDump parse_teacher(const std::string& jsonl, const Dataset& images);
TeacherDump load_teacher(const std::filesystem::path& path, const Dataset& images);

/// Sorts every group by descending score (stable).
void sort_by_score(TeacherDump& dump);

/// Teacher-vocabulary name -> registry name.
using SynonymMap = std::map<std::string, std::string>;
SynonymMap load_synonyms(const std::filesystem::path& path);

struct AlignOptions {
  double score_floor = 0.3;
  double nms_threshold = 0.5;
  /// Drop teacher labels overlapping a ground-truth box of the same image at
  /// IoU >= this value. nullopt disables the guard.
  std::optional<double> gt_suppress_threshold = 0.5;
  SynonymMap synonyms;
};

/// Turns raw teacher detections into unknown-class labels for one episode:
/// score floor, NMS, known-name exclusion, relabel as unknown keeping the
/// score as confidence, then the optional ground-truth overlap guard.
std::vector<Label> align_image(const std::vector<TeacherDetection>& dets,
                               const ClassRegistry& registry, const TaskState& state,
                               const std::vector<Annotation>& ground_truth,
                               const AlignOptions& options);

LabelMap align(const TeacherDump& dump, const ClassRegistry& registry,
               const TaskState& state, const Dataset& ground_truth,
               const AlignOptions& options);

/// Ground truth first (confidence 1), then teacher labels, order preserved.
std::vector<Label> merge(const std::vector<Annotation>& ground_truth,
                         const std::vector<Label>& teacher_labels);

LabelMap merge(const Dataset& ground_truth, const LabelMap& teacher_labels);

/// JSONL, one record per image: {"image_id", "labels": [{"class", "bbox",
/// "confidence", "source"}]}; "bbox" is normalized cxcywh.
std::string dump_labels(const LabelMap& labels, const ClassRegistry& registry);

}  // namespace owf
