#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "owf/detector.hpp"
#include "owf/protocol.hpp"
#include "owf/teacher.hpp"

namespace owf {

/// Seeded generator of token scenes with complete ground truth. Every
/// category has an archetype vector; object tokens are
///   [archetype + shared objectness + noise | grid-cell RBF | box logits]
/// and clutter tokens carry noise in the archetype slot.
struct SynthConfig {
  std::vector<std::string> categories;      // registry order
  std::vector<std::string> teacher_vocabulary;
  std::size_t archetype_dim = 16;
  std::size_t grid = 3;                     // objects sit in distinct grid cells
  std::size_t min_objects = 1;
  std::size_t max_objects = 4;
  std::size_t min_clutter = 1;
  std::size_t max_clutter = 3;
  double archetype_scale = 2.0;
  double objectness_scale = 2.0;
  double noise_sigma = 0.1;
  double clutter_sigma = 0.5;
  double min_box = 0.12;
  double max_box = 0.3;
  double teacher_recall = 0.9;              // ρ
  double teacher_jitter = 0.02;             // box jitter std (normalized units)
  double teacher_score_lo = 0.6;            // score = IoU(jittered, true) * U(lo, hi)
  double teacher_score_hi = 1.0;
  double image_size = 1000.0;               // pixels, for file exports
  std::uint64_t seed = 0;

  std::size_t token_dim() const { return archetype_dim + grid * grid + 4; }
  ClassRegistry registry() const { return ClassRegistry(categories); }
  /// Throws ConfigError when the vocabulary names unknown categories or a
  /// probability is outside [0,1].
  void validate() const;
};

/// Default desk-scale benchmark: 8 known + 4 unknown categories, three of the
/// unknown ones in the teacher vocabulary and one held out.
SynthConfig default_benchmark_config(std::uint64_t seed);

struct SynthObject {
  ClassId category = 0;
  Box box;
};

struct SynthScene {
  ImageId id = 0;
  SceneTokens tokens;
  std::vector<SynthObject> objects;  // full ground truth, knowns and unknowns

  /// Ground truth restricted to `classes`.
  std::vector<SynthObject> restricted(const std::set<ClassId>& classes) const;
};

struct SynthCorpus {
  std::vector<SynthScene> scenes;
};

/// Archetype vector (length archetype_dim) of a category.
std::vector<double> archetype(const SynthConfig& config, ClassId category);

/// Scene i uses its own derived stream, so scenes are independent of n.
SynthCorpus generate(const SynthConfig& config, std::size_t n_scenes,
                     std::uint64_t first_id = 0);

/// Simulated teacher: every object whose category is in the vocabulary is
/// reported with probability ρ, with a jittered box and a score calibrated
/// on the jitter. Categories outside the vocabulary are never reported.
std::vector<TeacherDetection> teacher_oracle(const SynthScene& scene, const SynthConfig& config);
TeacherDump teacher_oracle(const SynthCorpus& corpus, const SynthConfig& config);

/// Images of `config.image_size` pixels with annotations for `classes`.
Dataset to_dataset(const SynthCorpus& corpus, const SynthConfig& config,
                   const std::set<ClassId>& classes, const std::string& split);

/// JSONL, one scene per line: {"scene_id", "tokens", "objects":
/// [{"category", "bbox"}]}; bbox is normalized cxcywh.
std::string dump_corpus(const SynthCorpus& corpus, const ClassRegistry& registry);
SynthCorpus parse_corpus(const std::string& jsonl, const ClassRegistry& registry);
void save_corpus(const SynthCorpus& corpus, const ClassRegistry& registry,
                 const std::filesystem::path& path);
SynthCorpus load_corpus(const std::filesystem::path& path, const ClassRegistry& registry);

}  // namespace owf
