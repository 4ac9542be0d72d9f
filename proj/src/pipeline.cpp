#include "owf/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "owf/json_util.hpp"

namespace owf {

using nlohmann::json;
namespace fs = std::filesystem;

void RunConfig::apply_strict_paper() {
  strict_paper = true;
  align.gt_suppress_threshold.reset();
  train.loss.background_negatives = false;
  train.pseudo_overlap_guard.reset();
}

namespace {

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) throw ValidationError("run config: '" + where + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ValidationError("run config: unknown key '" + key + "' in '" + where + "'");
    }
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

void read_prob(const json& obj, const char* key, double& out, const std::string& where) {
  read(obj, key, out);
  if (!(out >= 0.0 && out <= 1.0)) {
    throw ConfigError(fmt::format("run config: {}.{} must lie in [0,1]", where, key));
  }
}

std::optional<fs::path> read_path(const json& obj, const char* key, const fs::path& base) {
  if (!obj.contains(key)) return std::nullopt;
  fs::path p = obj.at(key).get<std::string>();
  if (p.is_relative()) p = base / p;
  if (!fs::exists(p)) throw ValidationError(fmt::format("run config: {} '{}' does not exist", key, p.string()));
  return p;
}

SynthConfig parse_synth(const json& s, std::uint64_t seed) {
  check_keys(s, {"train_scenes", "eval_scenes", "categories", "teacher_vocabulary", "teacher_recall",
                 "teacher_jitter", "noise_sigma", "clutter_sigma", "min_objects", "max_objects",
                 "min_clutter", "max_clutter"},
             "synthetic");
  auto cfg = default_benchmark_config(seed);
  if (s.contains("categories")) {
    cfg.categories = s.at("categories").get<std::vector<std::string>>();
    cfg.teacher_vocabulary.assign(cfg.categories.begin(),
                                  cfg.categories.end() - (cfg.categories.empty() ? 0 : 1));
  }
  read(s, "teacher_vocabulary", cfg.teacher_vocabulary);
  read(s, "teacher_recall", cfg.teacher_recall);
  read(s, "teacher_jitter", cfg.teacher_jitter);
  read(s, "noise_sigma", cfg.noise_sigma);
  read(s, "clutter_sigma", cfg.clutter_sigma);
  read(s, "min_objects", cfg.min_objects);
  read(s, "max_objects", cfg.max_objects);
  read(s, "min_clutter", cfg.min_clutter);
  read(s, "max_clutter", cfg.max_clutter);
  return cfg;
}

// Default split of a synthetic category list: the first two thirds are the
// first task, the rest the second.
SplitConfig default_split(const std::vector<std::string>& categories) {
  SplitConfig split;
  auto cut = categories.size() * 2 / 3;
  if (cut == 0) cut = categories.size();
  split.tasks.push_back({"t1", {categories.begin(), categories.begin() + static_cast<long>(cut)}});
  if (cut < categories.size()) {
    split.tasks.push_back({"t2", {categories.begin() + static_cast<long>(cut), categories.end()}});
  }
  return split;
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir) {
  auto doc = parse_json(json_text, "run config");
  return json_schema_guard("run config", [&] {
    check_keys(doc, {"seed", "strict_paper", "output_dir", "inputs", "split", "synthetic", "task",
                     "episodes", "align", "use_teacher", "detector", "matching", "loss", "pseudo",
                     "optimizer", "replay", "eval"},
               "config");
    RunConfig cfg;
    if (!doc.contains("seed")) throw ValidationError("run config: 'seed' is required");
    cfg.seed = doc.at("seed").get<std::uint64_t>();
    cfg.train.seed = cfg.seed;
    if (doc.contains("output_dir")) {
      fs::path out = doc.at("output_dir").get<std::string>();
      cfg.output_dir = out.is_relative() ? base_dir / out : out;
    }

    if (doc.contains("inputs")) {
      const auto& in = doc.at("inputs");
      check_keys(in, {"split_config", "annotations", "eval_annotations", "teacher", "synonyms",
                      "train_corpus", "eval_corpus", "detections", "checkpoint", "image_size"},
                 "inputs");
      cfg.split_config = read_path(in, "split_config", base_dir);
      cfg.annotations = read_path(in, "annotations", base_dir);
      cfg.eval_annotations = read_path(in, "eval_annotations", base_dir);
      cfg.teacher = read_path(in, "teacher", base_dir);
      cfg.synonyms = read_path(in, "synonyms", base_dir);
      cfg.train_corpus = read_path(in, "train_corpus", base_dir);
      cfg.eval_corpus = read_path(in, "eval_corpus", base_dir);
      cfg.detections = read_path(in, "detections", base_dir);
      cfg.checkpoint = read_path(in, "checkpoint", base_dir);
      read(in, "image_size", cfg.image_size);
      if (!(cfg.image_size > 0.0)) throw ConfigError("run config: inputs.image_size must be positive");
    }

    std::optional<SplitConfig> split;
    if (doc.contains("split")) {
      if (cfg.split_config) throw ConfigError("run config: give either 'split' or inputs.split_config");
      split = parse_split_config(doc.at("split").dump());
    } else if (cfg.split_config) {
      split = load_split_config(*cfg.split_config);
    }

    if (doc.contains("synthetic")) {
      const auto& s = doc.at("synthetic");
      SyntheticSource src;
      src.config = parse_synth(s, cfg.seed);
      read(s, "train_scenes", src.train_scenes);
      read(s, "eval_scenes", src.eval_scenes);
      if (!split) split = default_split(src.config.categories);
      // Category ids must follow the registry order of the split.
      auto registry = split->registry();
      ClassRegistry synth_registry(src.config.categories);
      if (registry.size() != synth_registry.size()) {
        throw ConfigError("run config: split classes and synthetic categories differ");
      }
      for (const auto& name : synth_registry.names()) {
        if (!registry.find(name)) {
          throw ConfigError("run config: synthetic category '" + name + "' is not in the split");
        }
      }
      src.config.categories = registry.names();
      src.config.validate();
      cfg.synthetic = std::move(src);
    }
    if (split) {
      // Kept as JSON so prepare() does not re-read files.
      json tasks = json::array();
      for (const auto& t : split->tasks) tasks.push_back({{"name", t.name}, {"classes", t.classes}});
      cfg.split_json = json{{"tasks", tasks}}.dump();
    }

    read(doc, "task", cfg.task);
    if (doc.contains("episodes")) cfg.episodes = doc.at("episodes").get<std::size_t>();
    read(doc, "use_teacher", cfg.use_teacher);

    if (doc.contains("align")) {
      const auto& a = doc.at("align");
      check_keys(a, {"score_floor", "nms_threshold", "gt_suppress_threshold"}, "align");
      read_prob(a, "score_floor", cfg.align.score_floor, "align");
      read_prob(a, "nms_threshold", cfg.align.nms_threshold, "align");
      if (a.contains("gt_suppress_threshold")) {
        if (a.at("gt_suppress_threshold").is_null()) {
          cfg.align.gt_suppress_threshold.reset();
        } else {
          double v = a.at("gt_suppress_threshold").get<double>();
          if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("run config: align.gt_suppress_threshold must lie in [0,1]");
          cfg.align.gt_suppress_threshold = v;
        }
      }
    }
    if (cfg.synonyms) cfg.align.synonyms = load_synonyms(*cfg.synonyms);

    if (doc.contains("detector")) {
      const auto& d = doc.at("detector");
      check_keys(d, {"queries", "dim"}, "detector");
      read(d, "queries", cfg.queries);
      read(d, "dim", cfg.dim);
      if (cfg.queries == 0 || cfg.dim == 0) throw ConfigError("run config: detector sizes must be positive");
    }
    if (doc.contains("matching")) {
      const auto& m = doc.at("matching");
      check_keys(m, {"l1", "giou"}, "matching");
      read(m, "l1", cfg.train.match.l1);
      read(m, "giou", cfg.train.match.giou);
    }
    if (doc.contains("loss")) {
      const auto& l = doc.at("loss");
      check_keys(l, {"alpha", "gamma", "eps", "background_negatives", "pseudo_target_grad"}, "loss");
      read_prob(l, "alpha", cfg.train.loss.alpha, "loss");
      read(l, "gamma", cfg.train.loss.gamma);
      read(l, "eps", cfg.train.loss.eps);
      read(l, "background_negatives", cfg.train.loss.background_negatives);
      read(l, "pseudo_target_grad", cfg.train.loss.pseudo_target_grad);
      if (cfg.train.loss.gamma < 0.0 || !(cfg.train.loss.eps > 0.0)) {
        throw ConfigError("run config: loss.gamma must be >= 0 and loss.eps > 0");
      }
    }
    if (doc.contains("pseudo")) {
      const auto& p = doc.at("pseudo");
      check_keys(p, {"enabled", "k", "overlap_guard"}, "pseudo");
      read(p, "enabled", cfg.train.use_pseudo);
      read(p, "k", cfg.train.pseudo_k);
      if (p.contains("overlap_guard")) {
        if (p.at("overlap_guard").is_null()) {
          cfg.train.pseudo_overlap_guard.reset();
        } else {
          double v = p.at("overlap_guard").get<double>();
          if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("run config: pseudo.overlap_guard must lie in [0,1]");
          cfg.train.pseudo_overlap_guard = v;
        }
      }
    }
    if (doc.contains("optimizer")) {
      const auto& o = doc.at("optimizer");
      check_keys(o, {"type", "epochs", "learning_rate", "beta1", "beta2", "grad_clip", "schedule"}, "optimizer");
      if (o.contains("type")) {
        auto type = o.at("type").get<std::string>();
        if (type != "adam" && type != "sgd") throw ConfigError("run config: optimizer.type must be 'adam' or 'sgd'");
        cfg.train.optimizer = type == "adam" ? Optimizer::kAdam : Optimizer::kSgdMomentum;
      }
      if (o.contains("schedule")) {
        auto sched = o.at("schedule").get<std::string>();
        if (sched != "constant" && sched != "cosine") {
          throw ConfigError("run config: optimizer.schedule must be 'constant' or 'cosine'");
        }
        cfg.train.cosine_schedule = sched == "cosine";
      }
      read(o, "epochs", cfg.train.epochs);
      read(o, "learning_rate", cfg.train.learning_rate);
      read(o, "beta1", cfg.train.beta1);
      read(o, "beta2", cfg.train.beta2);
      read(o, "grad_clip", cfg.train.grad_clip);
      if (!(cfg.train.learning_rate > 0.0) || cfg.train.beta1 < 0.0 || cfg.train.beta1 >= 1.0 ||
          cfg.train.beta2 < 0.0 || cfg.train.beta2 >= 1.0 ||
          cfg.train.grad_clip < 0.0) {
        throw ConfigError("run config: optimizer needs learning_rate > 0, betas in [0,1), grad_clip >= 0");
      }
    }
    if (doc.contains("replay")) {
      const auto& r = doc.at("replay");
      check_keys(r, {"enabled", "per_class", "finetune_epochs", "finetune_learning_rate", "ablation"},
                 "replay");
      read(r, "enabled", cfg.replay);
      read(r, "per_class", cfg.exemplar_quota);
      read(r, "finetune_epochs", cfg.finetune_epochs);
      read(r, "finetune_learning_rate", cfg.finetune_learning_rate);
      read(r, "ablation", cfg.replay_ablation);
      if (cfg.exemplar_quota == 0) throw ConfigError("run config: replay.per_class must be >= 1");
    }
    if (doc.contains("eval")) {
      const auto& e = doc.at("eval");
      check_keys(e, {"iou_threshold", "score_floor", "nms_threshold", "ap_mode", "wi_recall", "a_ose_score_floor"},
                 "eval");
      if (e.contains("nms_threshold")) {
        if (e.at("nms_threshold").is_null()) {
          cfg.eval_nms.reset();
        } else {
          double v = e.at("nms_threshold").get<double>();
          if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("run config: eval.nms_threshold must lie in [0,1]");
          cfg.eval_nms = v;
        }
      }
      read_prob(e, "iou_threshold", cfg.eval.iou_threshold, "eval");
      read_prob(e, "score_floor", cfg.eval_score_floor, "eval");
      read_prob(e, "wi_recall", cfg.eval.wi_recall, "eval");
      read_prob(e, "a_ose_score_floor", cfg.eval.a_ose_score_floor, "eval");
      if (e.contains("ap_mode")) {
        auto mode = e.at("ap_mode").get<std::string>();
        if (mode == "all_point") {
          cfg.eval.ap_mode = ApMode::kAllPoint;
        } else if (mode == "eleven_point") {
          cfg.eval.ap_mode = ApMode::kElevenPoint;
        } else {
          throw ConfigError("run config: eval.ap_mode must be 'all_point' or 'eleven_point'");
        }
      }
    }
    if (doc.value("strict_paper", false)) cfg.apply_strict_paper();
    return cfg;
  });
}

RunConfig load_run_config(const fs::path& path) {
  return parse_run_config(read_text_file(path), path.parent_path());
}

namespace {

Dataset corpus_images(const SynthCorpus& corpus, double image_size) {
  Dataset ds;
  for (const auto& scene : corpus.scenes) {
    ds.images.push_back({scene.id, image_size, image_size, "scene_" + std::to_string(scene.id)});
    auto& anns = ds.annotations[scene.id];
    for (const auto& o : scene.objects) anns.push_back({o.category, o.box});
  }
  return ds;
}

}  // namespace

Experiment prepare(const RunConfig& config) {
  Experiment exp;
  if (config.split_json.empty()) {
    throw ConfigError("run config: no split (inputs.split_config, 'split' or 'synthetic')");
  }
  exp.split = parse_split_config(config.split_json);
  exp.registry = exp.split.registry();
  exp.tasks = build_task_state(exp.split, exp.registry);

  if (config.synthetic) {
    const auto& s = *config.synthetic;
    exp.synth = s.config;
    exp.train = generate(s.config, s.train_scenes, 0);
    exp.eval = generate(s.config, s.eval_scenes, s.train_scenes);
    exp.train_images = corpus_images(exp.train, s.config.image_size);
  } else {
    if (config.train_corpus) exp.train = load_corpus(*config.train_corpus, exp.registry);
    if (config.eval_corpus) exp.eval = load_corpus(*config.eval_corpus, exp.registry);
    if (config.annotations) {
      exp.train_images = load_annotations(*config.annotations, exp.registry);
    } else {
      exp.train_images = corpus_images(exp.train, config.image_size);
    }
  }

  if (config.teacher) {
    exp.teacher = load_teacher(*config.teacher, exp.train_images);
  } else if (config.synthetic) {
    exp.teacher = teacher_oracle(exp.train, *exp.synth);
  }
  return exp;
}

std::vector<TrainingSample> build_samples(const Experiment& exp, const TaskState& state,
                                          const std::set<ClassId>& gt_classes,
                                          const RunConfig& config,
                                          const std::set<ImageId>& scene_ids) {
  auto gt = filter_classes(exp.train_images, gt_classes);
  LabelMap teacher;
  if (config.use_teacher) teacher = align(exp.teacher, exp.registry, state, gt, config.align);
  std::vector<TrainingSample> samples;
  for (const auto& scene : exp.train.scenes) {
    if (!scene_ids.empty() && scene_ids.count(scene.id) == 0) continue;
    auto g = gt.annotations.find(scene.id);
    auto t = teacher.find(scene.id);
    samples.push_back({scene.tokens, merge(g == gt.annotations.end() ? std::vector<Annotation>{} : g->second,
                                           t == teacher.end() ? std::vector<Label>{} : t->second)});
  }
  return samples;
}

EvalSet make_eval_set(const DetectorParams& params, const SynthCorpus& corpus,
                      const TaskState& state, double score_floor,
                      std::optional<double> nms_threshold) {
  if (params.config.num_known != state.num_known()) {
    throw ValidationError(fmt::format("detector has {} class channels but the task knows {} classes",
                                      params.config.num_known, state.num_known()));
  }
  EvalSet set;
  for (const auto& scene : corpus.scenes) {
    EvalImage im;
    im.id = scene.id;
    for (const auto& o : scene.objects) im.ground_truth.push_back({o.category, o.box, !state.is_known(o.category)});
    im.detections = infer(params, scene.tokens, score_floor);
    if (nms_threshold) im.detections = suppress_duplicates(im.detections, *nms_threshold);
    set.push_back(std::move(im));
  }
  return set;
}

std::map<ClassId, std::optional<double>> unknown_recall_by_class(const EvalSet& set,
                                                                 const TaskState& state,
                                                                 double iou_threshold) {
  std::map<ClassId, std::optional<double>> out;
  for (auto c : state.unknown()) out[c] = u_recall(set, iou_threshold, std::set<ClassId>{c});
  return out;
}

namespace {

TrainOptions stage_options(const RunConfig& config, std::size_t task, bool finetune) {
  auto opts = config.train;
  opts.seed = config.seed + 2 * task + (finetune ? 1 : 0);
  if (finetune) {
    opts.epochs = config.finetune_epochs;
    opts.learning_rate = config.finetune_learning_rate;
  }
  return opts;
}

TrainResult checked_train(DetectorParams params, const std::vector<TrainingSample>& samples,
                          const TrainOptions& opts) {
  auto result = train(std::move(params), samples, opts);
  if (result.fault) throw NumericFault(*result.fault);
  return result;
}

}  // namespace

std::vector<TaskOutcome> run_pipeline(const RunConfig& config, const Experiment& exp, bool replay) {
  auto n_tasks = config.episodes.value_or(exp.tasks.size());
  if (n_tasks == 0 || n_tasks > exp.tasks.size()) {
    throw ConfigError(fmt::format("run config: episodes must lie in [1, {}]", exp.tasks.size()));
  }
  if (exp.train.scenes.empty()) throw ValidationError("pipeline: no training scenes");
  DetectorConfig dc{config.queries, config.dim, static_cast<std::size_t>(exp.train.scenes.front().tokens.cols()),
                    exp.tasks.front().num_known(), config.seed};
  auto params = init_params(dc);

  std::vector<TaskOutcome> outcomes;
  for (std::size_t t = 0; t < n_tasks; ++t) {
    const auto& state = exp.tasks[t];
    params = expand_classes(params, state.num_known() - params.config.num_known);
    auto samples = build_samples(exp, state, state.current, config);
    auto result = checked_train(std::move(params), samples, stage_options(config, t, false));
    params = std::move(result.params);
    auto log = std::move(result.log);

    if (t > 0 && replay) {
      auto known_gt = filter_classes(exp.train_images, state.known);
      auto selection = select_exemplars(known_gt, state, config.exemplar_quota, config.seed + t);
      auto exemplars = build_samples(exp, state, state.known, config, selection.images);
      spdlog::info("task {}: finetuning on {} exemplar scenes", exp.split.tasks[t].name, exemplars.size());
      auto ft = checked_train(std::move(params), exemplars, stage_options(config, t, true));
      params = std::move(ft.params);
      log.insert(log.end(), ft.log.begin(), ft.log.end());
    }

    auto set = make_eval_set(params, exp.eval, state, config.eval_score_floor, config.eval_nms);
    TaskOutcome out;
    out.name = exp.split.tasks[t].name;
    out.report = evaluate(set, state, config.eval, out.name);
    out.unknown_recall = unknown_recall_by_class(set, state, config.eval.iou_threshold);
    out.log = std::move(log);
    out.params = params;
    outcomes.push_back(std::move(out));
  }
  return outcomes;
}

namespace {

void write_meta(const RunConfig& config, const std::string& command) {
  auto now = std::chrono::system_clock::now();
  json meta = {{"command", command},
               {"seed", config.seed},
               {"strict_paper", config.strict_paper},
               {"timestamp", fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(now)))}};
  write_text_file(config.output_dir / "run_meta.json", meta.dump(2) + "\n");
}

std::string loss_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,regression,box_score,cls,teacher_regression,teacher_box_score,teacher_cls,pseudo_cls,total\n";
  for (const auto& e : log) {
    const auto& m = e.mean;
    out += fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", e.epoch, m.regression,
                       m.box_score, m.cls, m.teacher_regression, m.teacher_box_score, m.teacher_cls,
                       m.pseudo_cls, e.mean_total);
  }
  return out;
}

json recall_json(const std::map<ClassId, std::optional<double>>& recall, const ClassRegistry& registry) {
  json out = json::object();
  for (const auto& [c, v] : recall) out[registry.name(c)] = v ? json(*v) : json(nullptr);
  return out;
}

void write_reports(const fs::path& dir, const MetricsReport& report, const ClassRegistry& registry) {
  write_text_file(dir / "report.json", report_json(report, registry));
  write_text_file(dir / "report.txt", report_table({report}));
  write_text_file(dir / "report.csv", report_csv(report, registry));
  write_text_file(dir / "pr_curves.svg", pr_curve_svg(report, registry));
}

const TaskState& task_state(const RunConfig& config, const Experiment& exp) {
  if (config.task >= exp.tasks.size()) {
    throw ConfigError(fmt::format("run config: task {} out of range (split has {})", config.task, exp.tasks.size()));
  }
  return exp.tasks[config.task];
}

}  // namespace

void cmd_align(const RunConfig& config) {
  auto exp = prepare(config);
  const auto& state = task_state(config, exp);
  auto gt = filter_classes(exp.train_images, state.known);
  LabelMap teacher;
  if (config.use_teacher) teacher = align(exp.teacher, exp.registry, state, gt, config.align);
  auto merged = merge(gt, teacher);

  std::size_t raw = 0, kept = 0;
  for (const auto& [_, dets] : exp.teacher) raw += dets.size();
  for (const auto& [_, labels] : teacher) kept += labels.size();
  json summary = {{"task", exp.split.tasks[config.task].name},
                  {"images", merged.size()},
                  {"ground_truth_labels", gt.annotation_count()},
                  {"teacher_detections", raw},
                  {"teacher_labels", kept}};
  write_text_file(config.output_dir / "labels.jsonl", dump_labels(merged, exp.registry));
  write_text_file(config.output_dir / "align_summary.json", summary.dump(2) + "\n");
  write_meta(config, "align");
  spdlog::info("align: {} images, {} ground-truth and {} teacher labels", merged.size(),
               gt.annotation_count(), kept);
}

void cmd_train(const RunConfig& config) {
  auto exp = prepare(config);
  const auto& state = task_state(config, exp);
  if (exp.train.scenes.empty()) throw ValidationError("train: no training scenes");
  DetectorParams params;
  if (config.checkpoint) {
    params = load_checkpoint(*config.checkpoint);
    if (params.config.num_known > state.num_known()) {
      throw ValidationError("train: checkpoint knows more classes than the task");
    }
    params = expand_classes(params, state.num_known() - params.config.num_known);
  } else {
    params = init_params({config.queries, config.dim, static_cast<std::size_t>(exp.train.scenes.front().tokens.cols()),
                          state.num_known(), config.seed});
  }
  auto samples = build_samples(exp, state, state.known, config);
  auto result = train(std::move(params), samples, stage_options(config, config.task, false));

  save_checkpoint(result.params, config.output_dir / "checkpoint.bin");
  write_text_file(config.output_dir / "loss_log.csv", loss_log_csv(result.log));
  json summary = {{"task", exp.split.tasks[config.task].name},
                  {"scenes", samples.size()},
                  {"epochs", result.log.size()},
                  {"final_loss", result.log.empty() ? json(nullptr) : json(result.log.back().mean_total)},
                  {"fault", result.fault ? json(*result.fault) : json(nullptr)}};
  write_text_file(config.output_dir / "train_summary.json", summary.dump(2) + "\n");
  write_meta(config, "train");
  if (result.fault) throw NumericFault(*result.fault);
}

std::map<ImageId, std::vector<Detection>> parse_detections(const std::string& jsonl,
                                                            const ClassRegistry& registry,
                                                            const Dataset& images) {
  std::map<ImageId, std::vector<Detection>> out;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto rec = parse_json(line, "detections", line_no - 1);
    json_schema_guard(fmt::format("detections line {}", line_no), [&] {
      auto id = rec.at("image_id").get<ImageId>();
      const auto* info = images.image(id);
      if (info == nullptr) throw ValidationError(fmt::format("detections line {}: unknown image {}", line_no, id));
      auto& dets = out[id];
      for (const auto& d : rec.at("detections")) {
        Detection det;
        auto name = d.at("class").get<std::string>();
        det.label = to_lower(name) == "unknown" ? kUnknownClass : registry.id(name);
        det.score = d.at("score").get<double>();
        auto b = d.at("bbox").get<std::vector<double>>();
        if (b.size() != 4) throw ValidationError(fmt::format("detections line {}: bbox needs 4 numbers", line_no));
        auto box = normalize_box({b[0], b[1], b[2], b[3]}, info->width, info->height);
        if (!box) throw ValidationError(fmt::format("detections line {}: empty box", line_no));
        det.box = *box;
        dets.push_back(det);
      }
    });
  }
  return out;
}

void cmd_eval(const RunConfig& config) {
  auto exp = prepare(config);
  const auto& state = task_state(config, exp);
  EvalSet set;
  if (config.detections) {
    if (!config.eval_annotations) throw ConfigError("eval: detections need inputs.eval_annotations");
    LoadOptions lo;
    lo.split = "eval";
    auto gt = load_annotations(*config.eval_annotations, exp.registry, lo);
    auto dets = parse_detections(read_text_file(*config.detections), exp.registry, gt);
    for (const auto& info : gt.images) {
      EvalImage im;
      im.id = info.id;
      if (auto it = gt.annotations.find(info.id); it != gt.annotations.end()) {
        for (const auto& a : it->second) im.ground_truth.push_back({a.class_id, a.box, !state.is_known(a.class_id)});
      }
      if (auto it = dets.find(info.id); it != dets.end()) im.detections = it->second;
      set.push_back(std::move(im));
    }
  } else {
    if (!config.checkpoint) throw ConfigError("eval: needs inputs.checkpoint or inputs.detections");
    if (exp.eval.scenes.empty()) throw ConfigError("eval: no evaluation scenes");
    set = make_eval_set(load_checkpoint(*config.checkpoint), exp.eval, state, config.eval_score_floor,
                        config.eval_nms);
  }
  auto report = evaluate(set, state, config.eval, exp.split.tasks[config.task].name);
  write_reports(config.output_dir, report, exp.registry);
  write_text_file(config.output_dir / "unknown_recall.json",
                  recall_json(unknown_recall_by_class(set, state, config.eval.iou_threshold), exp.registry).dump(2) + "\n");
  write_meta(config, "eval");
  std::fputs(report_table({report}).c_str(), stdout);
}

void cmd_pipeline(const RunConfig& config) {
  auto exp = prepare(config);
  auto outcomes = run_pipeline(config, exp, config.replay);

  json tasks = json::array();
  std::vector<MetricsReport> reports;
  for (std::size_t t = 0; t < outcomes.size(); ++t) {
    const auto& o = outcomes[t];
    auto dir = config.output_dir / fmt::format("task_{}_{}", t + 1, o.name);
    write_reports(dir, o.report, exp.registry);
    save_checkpoint(o.params, dir / "checkpoint.bin");
    write_text_file(dir / "loss_log.csv", loss_log_csv(o.log));
    tasks.push_back({{"task", o.name},
                     {"report", json::parse(report_json(o.report, exp.registry))},
                     {"unknown_recall", recall_json(o.unknown_recall, exp.registry)}});
    reports.push_back(o.report);
  }
  write_text_file(config.output_dir / "summary.json", json{{"replay", config.replay}, {"tasks", tasks}}.dump(2) + "\n");
  write_text_file(config.output_dir / "summary.txt", report_table(reports));

  if (config.replay_ablation && outcomes.size() > 1) {
    auto other = run_pipeline(config, exp, !config.replay);
    const auto& with = config.replay ? outcomes : other;
    const auto& without = config.replay ? other : outcomes;
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json rows = json::array();
    for (std::size_t t = 0; t < outcomes.size(); ++t) {
      rows.push_back({{"task", outcomes[t].name},
                      {"map_previous", {{"replay", opt(with[t].report.map_previous)},
                                        {"no_replay", opt(without[t].report.map_previous)}}},
                      {"map_both", {{"replay", opt(with[t].report.map_both)},
                                    {"no_replay", opt(without[t].report.map_both)}}}});
    }
    write_text_file(config.output_dir / "replay_ablation.json", json{{"tasks", rows}}.dump(2) + "\n");
  }
  write_meta(config, "pipeline");
  std::fputs(report_table(reports).c_str(), stdout);
}

}  // namespace owf
