#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "owf/metrics.hpp"
#include "owf/synth.hpp"
#include "owf/trainer.hpp"

namespace owf {

struct SyntheticSource {
  SynthConfig config;  // categories are reordered to registry order
  std::size_t train_scenes = 200;
  std::size_t eval_scenes = 100;
};

/// Parsed run configuration. Relative paths are resolved against the
/// directory of the config file.
struct RunConfig {
  std::uint64_t seed = 0;
  bool strict_paper = false;
  std::filesystem::path output_dir = "owf_out";

  // Inputs. Either `synthetic` or corpus/annotation files.
  std::optional<std::filesystem::path> split_config;
  std::optional<std::filesystem::path> annotations;       // COCO subset, training split
  std::optional<std::filesystem::path> eval_annotations;  // COCO subset, every class labelled
  std::optional<std::filesystem::path> teacher;           // teacher JSONL dump
  std::optional<std::filesystem::path> synonyms;
  std::optional<std::filesystem::path> train_corpus;      // scene JSONL
  std::optional<std::filesystem::path> eval_corpus;
  std::optional<std::filesystem::path> detections;        // detections JSONL for eval
  std::optional<std::filesystem::path> checkpoint;
  std::optional<SyntheticSource> synthetic;
  std::string split_json;  // resolved split ('split', split_config or synthetic default)
  double image_size = 1000.0;  // pixel size assumed for corpus scenes

  std::size_t task = 0;                 // task index for align/train/eval
  std::optional<std::size_t> episodes;  // pipeline: number of tasks to run

  AlignOptions align;
  bool use_teacher = true;
  std::size_t queries = 10;
  std::size_t dim = 64;
  TrainOptions train;
  std::size_t finetune_epochs = 20;
  double finetune_learning_rate = 5e-4;
  std::size_t exemplar_quota = 20;
  bool replay = true;
  bool replay_ablation = true;

  EvalOptions eval;
  double eval_score_floor = 0.05;
  std::optional<double> eval_nms = 0.5;  // class-agnostic duplicate suppression

  /// Switches off every guard not in the original method: the ground-truth
  /// overlap filter on teacher labels, the pseudo-label overlap guard and
  /// background negatives.
  void apply_strict_paper();
};

/// Throws ValidationError (schema, missing seed, missing files) or
/// ConfigError (inconsistent settings).
RunConfig parse_run_config(const std::string& json_text,
                           const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Data shared by all commands: registry, per-task states, corpora and the
/// raw teacher dump.
struct Experiment {
  SplitConfig split;
  ClassRegistry registry;
  std::vector<TaskState> tasks;
  SynthCorpus train;
  SynthCorpus eval;
  Dataset train_images;  // image sizes of the training scenes, full ground truth
  TeacherDump teacher;
  std::optional<SynthConfig> synth;
};

Experiment prepare(const RunConfig& config);

/// Ground truth for `gt_classes` plus (optionally) aligned teacher labels of
/// the scenes in `scene_ids` (all scenes when empty).
std::vector<TrainingSample> build_samples(const Experiment& exp, const TaskState& state,
                                          const std::set<ClassId>& gt_classes,
                                          const RunConfig& config,
                                          const std::set<ImageId>& scene_ids = {});

/// Composite detections of `params` on every eval scene, with full ground
/// truth flagged unknown where the class is not known in `state`.
EvalSet make_eval_set(const DetectorParams& params, const SynthCorpus& corpus,
                      const TaskState& state, double score_floor,
                      std::optional<double> nms_threshold = std::nullopt);

/// Recall of unknown detections restricted to each currently unknown class.
std::map<ClassId, std::optional<double>> unknown_recall_by_class(const EvalSet& set,
                                                                 const TaskState& state,
                                                                 double iou_threshold);

struct TaskOutcome {
  std::string name;
  MetricsReport report;
  std::map<ClassId, std::optional<double>> unknown_recall;
  std::vector<EpochLog> log;
  DetectorParams params;
};

/// Every task in order: expand the class head, train on current-class
/// ground truth plus teacher labels, finetune on exemplars from the second
/// task on (when `replay`), then evaluate. Throws NumericFault when
/// training diverges.
std::vector<TaskOutcome> run_pipeline(const RunConfig& config, const Experiment& exp, bool replay);

// Commands. Each writes its outputs under config.output_dir plus a
// run_meta.json with the timestamp; the other files are byte-stable.
void cmd_align(const RunConfig& config);
void cmd_train(const RunConfig& config);
void cmd_eval(const RunConfig& config);
void cmd_pipeline(const RunConfig& config);

/// Detections JSONL: {"image_id", "detections": [{"class", "score", "bbox"}]}
/// with pixel xywh boxes; "class" is a registry name or "unknown".
std::map<ImageId, std::vector<Detection>> parse_detections(const std::string& jsonl,
                                                            const ClassRegistry& registry,
                                                            const Dataset& images);

}  // namespace owf
