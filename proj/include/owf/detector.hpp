#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "owf/detection.hpp"
#include "owf/losses.hpp"
#include "owf/matching.hpp"

namespace owf {

using Matrix = Eigen::MatrixXd;

/// T×token_dim matrix of scene feature tokens.
using SceneTokens = Matrix;

struct DetectorConfig {
  std::size_t queries = 100;    // N
  std::size_t dim = 256;        // D
  std::size_t token_dim = 256;  // width of the raw scene tokens
  std::size_t num_known = 0;    // classification head has num_known + 1 channels
  std::uint64_t seed = 0;

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

/// Single-head attention of the stage queries over the encoded scene,
/// followed by a two-layer tanh feedforward with a residual connection on
/// the attention output.
struct StageParams {
  Matrix wq, wk, wv;  // D×D
  Matrix w1, b1;      // D×D, 1×D
  Matrix w2, b2;      // D×D, 1×D

  template <typename Self, typename F>
  static void visit(Self& self, const std::string& prefix, F&& f) {
    f(prefix + ".wq", self.wq); f(prefix + ".wk", self.wk); f(prefix + ".wv", self.wv);
    f(prefix + ".w1", self.w1); f(prefix + ".b1", self.b1);
    f(prefix + ".w2", self.w2); f(prefix + ".b2", self.b2);
  }
};

/// Learnable state of the cascade detector. The localization stage turns
/// the location queries into location embeddings (boxes, box scores); the
/// identification stage uses those embeddings as its queries to produce the
/// class embeddings (class scores).
struct DetectorParams {
  DetectorConfig config;
  Matrix queries;                 // N×D location queries
  Matrix enc_w, enc_b;            // token_dim×D, 1×D
  StageParams localization;
  StageParams identification;
  Matrix reg_w, reg_b;            // D×4, 1×4
  Matrix bs_w, bs_b;              // D×1, 1×1
  Matrix cls_w, cls_b;            // D×(C+1), 1×(C+1)

  /// Calls f(name, matrix&) for every tensor in a fixed order.
  template <typename F>
  void visit(F&& f) { visit_all(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_all(*this, f); }

  std::size_t num_channels() const { return config.num_known + 1; }
  std::size_t parameter_count() const;
  bool all_finite() const;

 private:
  template <typename Self, typename F>
  static void visit_all(Self& self, F& f) {
    f("queries", self.queries);
    f("enc_w", self.enc_w); f("enc_b", self.enc_b);
    StageParams::visit(self.localization, "loc", f);
    StageParams::visit(self.identification, "id", f);
    f("reg_w", self.reg_w); f("reg_b", self.reg_b);
    f("bs_w", self.bs_w); f("bs_b", self.bs_b);
    f("cls_w", self.cls_w); f("cls_b", self.cls_b);
  }
};

/// Same shapes as `config`, every entry zero.
DetectorParams zero_params(const DetectorConfig& config);

/// Seeded uniform init in [-1/sqrt(D), 1/sqrt(D)] for weights and queries;
/// biases start at zero.
DetectorParams init_params(const DetectorConfig& config);

/// Adds `extra` class channels before the unknown channel. New weights are
/// drawn like init_params; existing channels are kept.
DetectorParams expand_classes(const DetectorParams& params, std::size_t extra);

struct StageCache {
  Matrix x, q, k, v, attn, h, g, e;
};

struct ForwardCache {
  Matrix tokens, enc;
  StageCache loc, id;
  Matrix box, bs, cls;  // head outputs after sigmoid
};

struct ForwardResult {
  std::vector<Prediction> predictions;
  ForwardCache cache;
};

/// Throws NumericFault when an activation is not finite.
ForwardResult forward(const DetectorParams& params, const SceneTokens& scene);

/// Exact gradient of the loss with respect to every parameter, given the
/// loss gradient for each prediction.
DetectorParams backward(const DetectorParams& params, const ForwardCache& cache,
                        std::span<const PredictionGrad> grads);

/// Per query: score = max channel, label = argmax (lowest index on ties,
/// unknown channel eligible). Detections scoring below `score_floor` are
/// dropped.
std::vector<Detection> infer(const DetectorParams& params, const SceneTokens& scene,
                             double score_floor);
std::vector<Detection> composite(std::span<const Prediction> preds, double score_floor);

/// Class-agnostic NMS over composite detections, highest score first. The
/// queries of the toy detector do not see each other, so several of them
/// can settle on the same object.
std::vector<Detection> suppress_duplicates(const std::vector<Detection>& dets, double iou_threshold);

/// Versioned binary checkpoint (header + raw doubles). Round trips are
/// bit-exact.
std::string serialize_checkpoint(const DetectorParams& params);
DetectorParams deserialize_checkpoint(const std::string& bytes);
void save_checkpoint(const DetectorParams& params, const std::filesystem::path& path);
DetectorParams load_checkpoint(const std::filesystem::path& path);

}  // namespace owf
