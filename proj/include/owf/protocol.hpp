#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "owf/geometry.hpp"

namespace owf {

using ClassId = int;
using ImageId = std::int64_t;

/// Class id used by labels and detections that denote "unknown". On the
/// prediction side it corresponds to the channel right after the known
/// classes, see TaskState::unknown_channel().
inline constexpr ClassId kUnknownClass = -1;

/// Dense registry of every class name seen by a run. Ids are 0..size()-1 in
/// registry order; names are unique (case-insensitive).
class ClassRegistry {
 public:
  ClassRegistry() = default;
  explicit ClassRegistry(std::vector<std::string> names);

  std::size_t size() const { return names_.size(); }
  const std::string& name(ClassId id) const;
  std::optional<ClassId> find(const std::string& name) const;
  ClassId id(const std::string& name) const;  // throws ValidationError
  const std::vector<std::string>& names() const { return names_; }

 private:
  std::vector<std::string> names_;
  std::map<std::string, ClassId> lookup_;
};

std::string to_lower(std::string s);

/// One task of an incremental split: a name and its newly introduced classes.
struct TaskSpec {
  std::string name;
  std::vector<std::string> classes;
};

struct SplitConfig {
  std::vector<TaskSpec> tasks;

  /// Registry whose ids follow task order, so the classes known at task t
  /// are always the id prefix [0, known_count).
  ClassRegistry registry() const;
};

SplitConfig parse_split_config(const std::string& json_text);
SplitConfig load_split_config(const std::filesystem::path& path);

/// Episode bookkeeping. Immutable value: advancing returns a new state.
struct TaskState {
  int episode = 0;                      // 0-based task index
  std::size_t registry_size = 0;
  std::set<ClassId> known;              // previously_known ∪ current
  std::set<ClassId> previously_known;
  std::set<ClassId> current;
  std::map<ClassId, std::vector<ImageId>> exemplar_store;

  std::size_t num_known() const { return known.size(); }
  /// Index of the unknown channel in the classification output.
  std::size_t unknown_channel() const { return known.size(); }
  std::set<ClassId> unknown() const;
  bool is_known(ClassId id) const { return known.count(id) > 0; }
};

/// One TaskState per task. Groups must be disjoint and cover the registry.
std::vector<TaskState> build_task_state(const SplitConfig& split,
                                        const ClassRegistry& registry);

/// Promotes `newly_labeled` (all currently unknown) to known.
TaskState advance_episode(const TaskState& state,
                          const std::set<ClassId>& newly_labeled);

struct ImageInfo {
  ImageId id = 0;
  double width = 0.0;
  double height = 0.0;
  std::string file_name;
};

struct Annotation {
  ClassId class_id = 0;
  Box box;
};

struct Dataset {
  std::string split = "train";
  std::vector<ImageInfo> images;
  std::map<ImageId, std::vector<Annotation>> annotations;

  const ImageInfo* image(ImageId id) const;
  std::size_t annotation_count() const;
};

struct LoadOptions {
  /// Reject files naming categories missing from the registry. When false
  /// such annotations are skipped with a warning.
  bool strict = true;
  std::string split = "train";
};

/// Reads the COCO-style subset (images, annotations, categories). Category
/// names are resolved against `registry`; raw COCO ids never leave the file.
Dataset parse_annotations(const std::string& json_text,
                          const ClassRegistry& registry,
                          const LoadOptions& options = {});
Dataset load_annotations(const std::filesystem::path& path,
                         const ClassRegistry& registry,
                         const LoadOptions& options = {});

/// Writes `dataset` in the same COCO-style subset (absolute pixel boxes).
std::string dump_annotations(const Dataset& dataset, const ClassRegistry& registry);

/// Keeps only annotations whose class is in `keep`.
Dataset filter_classes(const Dataset& dataset, const std::set<ClassId>& keep);

struct ExemplarSelection {
  std::set<ImageId> images;
  std::map<ClassId, std::vector<ImageId>> per_class;
};

/// Balanced exemplar set: for each known class, up to `per_class_quota`
/// images containing it. Candidates are shuffled with `seed`, then stably
/// ordered by total instance count (fewest first).
ExemplarSelection select_exemplars(const Dataset& dataset, const TaskState& state,
                                   std::size_t per_class_quota, std::uint64_t seed);

/// Copy of `state` with its exemplar store replaced by `selection`.
TaskState with_exemplars(const TaskState& state, const ExemplarSelection& selection);

}  // namespace owf
