#include "owf/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "owf/error.hpp"
#include "owf/json_util.hpp"
#include "owf/rng.hpp"

namespace owf {

using nlohmann::json;

void SynthConfig::validate() const {
  if (categories.empty()) throw ConfigError("synth: no categories");
  ClassRegistry reg(categories);
  for (const auto& name : teacher_vocabulary) {
    if (!reg.find(name)) throw ConfigError("synth: vocabulary name '" + name + "' is not a category");
  }
  if (teacher_recall < 0.0 || teacher_recall > 1.0) throw ConfigError("synth: teacher recall outside [0,1]");
  if (grid == 0 || min_objects > max_objects || min_clutter > max_clutter) {
    throw ConfigError("synth: inconsistent scene size ranges");
  }
  if (max_objects > grid * grid) throw ConfigError("synth: more objects than grid cells");
  if (!(min_box > 0.0) || max_box < min_box || max_box > 1.0) throw ConfigError("synth: bad box size range");
  if (teacher_score_lo <= 0.0 || teacher_score_hi > 1.0 || teacher_score_lo > teacher_score_hi) {
    throw ConfigError("synth: teacher score range must lie in (0,1]");
  }
}

SynthConfig default_benchmark_config(std::uint64_t seed) {
  SynthConfig cfg;
  for (int i = 0; i < 12; ++i) {
    cfg.categories.push_back((i < 8 ? "known_" : "novel_") + std::to_string(i < 8 ? i : i - 8));
  }
  // every category except the last one; known names are removed by alignment
  cfg.teacher_vocabulary.assign(cfg.categories.begin(), cfg.categories.end() - 1);
  cfg.seed = seed;
  return cfg;
}

std::vector<SynthObject> SynthScene::restricted(const std::set<ClassId>& classes) const {
  std::vector<SynthObject> out;
  std::copy_if(objects.begin(), objects.end(), std::back_inserter(out),
               [&](const SynthObject& o) { return classes.count(o.category) > 0; });
  return out;
}

namespace {

std::vector<double> random_direction(Rng& rng, std::size_t dim, double norm) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dim);
  double s = 0.0;
  for (auto& x : v) {
    x = gauss(rng);
    s += x * x;
  }
  s = std::sqrt(s);
  for (auto& x : v) x *= norm / s;
  return v;
}

double logit(double p) {
  p = std::clamp(p, 1e-6, 1.0 - 1e-6);
  return std::log(p / (1.0 - p));
}

void write_position(const SynthConfig& cfg, const Box& box, Matrix& tokens, Eigen::Index r) {
  auto row = tokens.row(r);
  const auto g = cfg.grid;
  const double s = 0.5 / static_cast<double>(g);
  auto base = static_cast<Eigen::Index>(cfg.archetype_dim);
  for (std::size_t gy = 0; gy < g; ++gy) {
    for (std::size_t gx = 0; gx < g; ++gx) {
      double ux = (static_cast<double>(gx) + 0.5) / static_cast<double>(g);
      double uy = (static_cast<double>(gy) + 0.5) / static_cast<double>(g);
      double d2 = (box.cx - ux) * (box.cx - ux) + (box.cy - uy) * (box.cy - uy);
      row(base + static_cast<Eigen::Index>(gy * g + gx)) = std::exp(-d2 / (2.0 * s * s));
    }
  }
  base += static_cast<Eigen::Index>(g * g);
  row(base + 0) = logit(box.cx);
  row(base + 1) = logit(box.cy);
  row(base + 2) = logit(box.w);
  row(base + 3) = logit(box.h);
}

Box fit_inside(double cx, double cy, double w, double h) {
  w = std::min(w, 2.0 * std::min(cx, 1.0 - cx));
  h = std::min(h, 2.0 * std::min(cy, 1.0 - cy));
  return {cx, cy, w, h};
}

SynthScene generate_scene(const SynthConfig& cfg, ImageId id) {
  auto rng = make_stream(cfg.seed, "corpus", static_cast<std::uint64_t>(id));
  std::uniform_int_distribution<std::size_t> n_obj_dist(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<std::size_t> n_clutter_dist(cfg.min_clutter, cfg.max_clutter);
  std::uniform_int_distribution<std::size_t> cat_dist(0, cfg.categories.size() - 1);
  std::uniform_real_distribution<double> size_dist(cfg.min_box, cfg.max_box);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  const auto n_obj = n_obj_dist(rng);
  const auto n_clutter = n_clutter_dist(rng);
  const auto g = static_cast<double>(cfg.grid);

  std::vector<std::size_t> cells(cfg.grid * cfg.grid);
  std::iota(cells.begin(), cells.end(), std::size_t{0});
  std::shuffle(cells.begin(), cells.end(), rng);

  SynthScene scene;
  scene.id = id;
  scene.tokens = Matrix::Zero(static_cast<Eigen::Index>(n_obj + n_clutter),
                              static_cast<Eigen::Index>(cfg.token_dim()));
  for (std::size_t i = 0; i < n_obj; ++i) {
    auto cell = cells[i];
    double cx = (static_cast<double>(cell % cfg.grid) + 0.25 + 0.5 * unit(rng)) / g;
    double cy = (static_cast<double>(cell / cfg.grid) + 0.25 + 0.5 * unit(rng)) / g;
    double w = size_dist(rng);
    double h = size_dist(rng);
    SynthObject obj{static_cast<ClassId>(cat_dist(rng)), fit_inside(cx, cy, w, h)};

    const auto r = static_cast<Eigen::Index>(i);
    auto arch = archetype(cfg, obj.category);
    for (std::size_t k = 0; k < cfg.archetype_dim; ++k) {
      double eps = cfg.noise_sigma > 0.0 ? cfg.noise_sigma * noise(rng) : 0.0;
      scene.tokens(r, static_cast<Eigen::Index>(k)) = arch[k] + eps;
    }
    write_position(cfg, obj.box, scene.tokens, r);
    scene.objects.push_back(obj);
  }
  for (std::size_t i = 0; i < n_clutter; ++i) {
    const auto r = static_cast<Eigen::Index>(n_obj + i);
    for (std::size_t k = 0; k < cfg.archetype_dim; ++k) {
      scene.tokens(r, static_cast<Eigen::Index>(k)) = cfg.clutter_sigma * noise(rng);
    }
    double cx = 0.05 + 0.9 * unit(rng);
    double cy = 0.05 + 0.9 * unit(rng);
    double w = size_dist(rng);
    double h = size_dist(rng);
    write_position(cfg, fit_inside(cx, cy, w, h), scene.tokens, r);
  }
  return scene;
}

}  // namespace

std::vector<double> archetype(const SynthConfig& config, ClassId category) {
  auto obj_rng = make_stream(config.seed, "objectness");
  auto objectness = random_direction(obj_rng, config.archetype_dim, config.objectness_scale);
  auto rng = make_stream(config.seed, "archetype", static_cast<std::uint64_t>(category));
  auto v = random_direction(rng, config.archetype_dim, config.archetype_scale);
  for (std::size_t k = 0; k < v.size(); ++k) v[k] += objectness[k];
  return v;
}

SynthCorpus generate(const SynthConfig& config, std::size_t n_scenes, std::uint64_t first_id) {
  config.validate();
  SynthCorpus corpus;
  corpus.scenes.reserve(n_scenes);
  for (std::size_t i = 0; i < n_scenes; ++i) {
    corpus.scenes.push_back(generate_scene(config, static_cast<ImageId>(first_id + i)));
  }
  return corpus;
}

std::vector<TeacherDetection> teacher_oracle(const SynthScene& scene, const SynthConfig& config) {
  std::set<std::string> vocab;
  for (const auto& v : config.teacher_vocabulary) vocab.insert(to_lower(v));
  auto rng = make_stream(config.seed, "teacher", static_cast<std::uint64_t>(scene.id));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);

  std::vector<TeacherDetection> out;
  for (const auto& obj : scene.objects) {
    // draw a fixed amount of randomness per object so streams stay aligned
    double keep = unit(rng);
    std::array<double, 4> j{jitter(rng), jitter(rng), jitter(rng), jitter(rng)};
    double u = unit(rng);
    const auto& name = config.categories[static_cast<std::size_t>(obj.category)];
    if (!vocab.count(to_lower(name))) continue;
    if (!(keep < config.teacher_recall)) continue;

    const double s = config.teacher_jitter;
    double cx = std::clamp(obj.box.cx + s * j[0], 0.01, 0.99);
    double cy = std::clamp(obj.box.cy + s * j[1], 0.01, 0.99);
    double w = std::max(0.01, obj.box.w + s * j[2]);
    double h = std::max(0.01, obj.box.h + s * j[3]);
    Box box = s > 0.0 ? fit_inside(cx, cy, w, h) : obj.box;
    double score = iou(box, obj.box) *
                   (config.teacher_score_lo + (config.teacher_score_hi - config.teacher_score_lo) * u);
    out.push_back({scene.id, name, box, std::clamp(score, 0.01, 1.0)});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const TeacherDetection& a, const TeacherDetection& b) { return a.score > b.score; });
  return out;
}

TeacherDump teacher_oracle(const SynthCorpus& corpus, const SynthConfig& config) {
  TeacherDump dump;
  for (const auto& scene : corpus.scenes) {
    auto dets = teacher_oracle(scene, config);
    if (!dets.empty()) dump[scene.id] = std::move(dets);
  }
  return dump;
}

Dataset to_dataset(const SynthCorpus& corpus, const SynthConfig& config,
                   const std::set<ClassId>& classes, const std::string& split) {
  Dataset ds;
  ds.split = split;
  for (const auto& scene : corpus.scenes) {
    ds.images.push_back({scene.id, config.image_size, config.image_size,
                         "scene_" + std::to_string(scene.id)});
    auto& anns = ds.annotations[scene.id];
    for (const auto& o : scene.restricted(classes)) anns.push_back({o.category, o.box});
  }
  return ds;
}

std::string dump_corpus(const SynthCorpus& corpus, const ClassRegistry& registry) {
  std::string out;
  for (const auto& scene : corpus.scenes) {
    json rec;
    rec["scene_id"] = scene.id;
    rec["tokens"] = json::array();
    for (Eigen::Index i = 0; i < scene.tokens.rows(); ++i) {
      std::vector<double> row(static_cast<std::size_t>(scene.tokens.cols()));
      for (Eigen::Index k = 0; k < scene.tokens.cols(); ++k) row[static_cast<std::size_t>(k)] = scene.tokens(i, k);
      rec["tokens"].push_back(row);
    }
    rec["objects"] = json::array();
    for (const auto& o : scene.objects) {
      rec["objects"].push_back(
          {{"category", registry.name(o.category)}, {"bbox", {o.box.cx, o.box.cy, o.box.w, o.box.h}}});
    }
    out += rec.dump();
    out += '\n';
  }
  return out;
}

SynthCorpus parse_corpus(const std::string& jsonl, const ClassRegistry& registry) {
  SynthCorpus corpus;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto rec = parse_json(line, "corpus", line_no - 1);
    json_schema_guard("corpus line " + std::to_string(line_no), [&] {
      SynthScene scene;
      scene.id = rec.at("scene_id").get<ImageId>();
      auto rows = rec.at("tokens").get<std::vector<std::vector<double>>>();
      if (rows.empty()) throw ValidationError("corpus: scene without tokens");
      scene.tokens.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != rows[0].size()) throw ValidationError("corpus: ragged token rows");
        for (std::size_t k = 0; k < rows[i].size(); ++k) {
          scene.tokens(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
        }
      }
      for (const auto& o : rec.at("objects")) {
        auto b = o.at("bbox").get<std::array<double, 4>>();
        scene.objects.push_back({registry.id(o.at("category").get<std::string>()), Box::from_array(b)});
      }
      corpus.scenes.push_back(std::move(scene));
    });
  }
  return corpus;
}

void save_corpus(const SynthCorpus& corpus, const ClassRegistry& registry,
                 const std::filesystem::path& path) {
  write_text_file(path, dump_corpus(corpus, registry));
}

SynthCorpus load_corpus(const std::filesystem::path& path, const ClassRegistry& registry) {
  return parse_corpus(read_text_file(path), registry);
}

}  // namespace owf
