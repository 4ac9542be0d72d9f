#include "owf/protocol.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "owf/error.hpp"
#include "owf/json_util.hpp"
#include "owf/rng.hpp"

namespace owf {

using nlohmann::json;

std::string to_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

ClassRegistry::ClassRegistry(std::vector<std::string> names) : names_(std::move(names)) {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    auto key = to_lower(names_[i]);
    if (key.empty()) throw ValidationError("class names must be non-empty");
    if (!lookup_.emplace(key, static_cast<ClassId>(i)).second) {
      throw ValidationError("duplicate class name '" + names_[i] + "'");
    }
  }
}

const std::string& ClassRegistry::name(ClassId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= names_.size()) {
    throw ValidationError("class id " + std::to_string(id) + " not in registry");
  }
  return names_[static_cast<std::size_t>(id)];
}

std::optional<ClassId> ClassRegistry::find(const std::string& name) const {
  auto it = lookup_.find(to_lower(name));
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

ClassId ClassRegistry::id(const std::string& name) const {
  auto found = find(name);
  if (!found) throw ValidationError("unknown class name '" + name + "'");
  return *found;
}

ClassRegistry SplitConfig::registry() const {
  std::vector<std::string> names;
  for (const auto& t : tasks) names.insert(names.end(), t.classes.begin(), t.classes.end());
  try {
    return ClassRegistry(std::move(names));
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("split config: ") + e.what());
  }
}

SplitConfig parse_split_config(const std::string& json_text) {
  auto doc = parse_json(json_text, "split config");
  return json_schema_guard("split config", [&] {
    SplitConfig cfg;
    if (!doc.is_object() || !doc.contains("tasks") || !doc["tasks"].is_array()) {
      throw ConfigError("split config: expected an object with a 'tasks' array");
    }
    for (const auto& t : doc["tasks"]) {
      TaskSpec spec;
      spec.name = t.value("name", std::string{});
      if (!t.contains("classes") || !t["classes"].is_array()) {
        throw ConfigError("split config: task '" + spec.name + "' has no 'classes' array");
      }
      for (const auto& c : t["classes"]) spec.classes.push_back(c.get<std::string>());
      cfg.tasks.push_back(std::move(spec));
    }
    if (cfg.tasks.empty()) throw ConfigError("split config: no tasks");
    return cfg;
  });
}

SplitConfig load_split_config(const std::filesystem::path& path) {
  return parse_split_config(read_text_file(path));
}

std::set<ClassId> TaskState::unknown() const {
  std::set<ClassId> out;
  for (std::size_t i = 0; i < registry_size; ++i) {
    auto id = static_cast<ClassId>(i);
    if (!known.count(id)) out.insert(id);
  }
  return out;
}

std::vector<TaskState> build_task_state(const SplitConfig& split,
                                        const ClassRegistry& registry) {
  std::map<ClassId, std::string> owner;
  std::vector<std::set<ClassId>> groups;
  for (const auto& task : split.tasks) {
    std::set<ClassId> group;
    for (const auto& name : task.classes) {
      auto id = registry.find(name);
      if (!id) throw ConfigError("split config: class '" + name + "' not in registry");
      auto [it, fresh] = owner.emplace(*id, task.name);
      if (!fresh) {
        throw ConfigError("split config: class '" + name + "' appears in tasks '" +
                          it->second + "' and '" + task.name + "'");
      }
      group.insert(*id);
    }
    groups.push_back(std::move(group));
  }
  if (owner.size() != registry.size()) {
    std::string missing;
    for (std::size_t i = 0; i < registry.size(); ++i) {
      if (!owner.count(static_cast<ClassId>(i))) {
        missing += (missing.empty() ? "" : ", ") + registry.name(static_cast<ClassId>(i));
      }
    }
    throw ConfigError("split config: classes not assigned to any task: " + missing);
  }

  std::vector<TaskState> states;
  TaskState state;
  state.registry_size = registry.size();
  for (std::size_t t = 0; t < groups.size(); ++t) {
    state.episode = static_cast<int>(t);
    state.previously_known = state.known;
    state.current = groups[t];
    state.known.insert(groups[t].begin(), groups[t].end());
    states.push_back(state);
  }
  return states;
}

TaskState advance_episode(const TaskState& state, const std::set<ClassId>& newly_labeled) {
  for (auto id : newly_labeled) {
    if (state.is_known(id)) {
      throw ValidationError("class " + std::to_string(id) + " is already known");
    }
    if (id < 0 || static_cast<std::size_t>(id) >= state.registry_size) {
      throw ValidationError("class " + std::to_string(id) + " not in registry");
    }
  }
  TaskState next = state;
  next.episode = state.episode + 1;
  next.previously_known = state.known;
  next.current = newly_labeled;
  next.known.insert(newly_labeled.begin(), newly_labeled.end());
  return next;
}

const ImageInfo* Dataset::image(ImageId id) const {
  auto it = std::find_if(images.begin(), images.end(),
                         [&](const ImageInfo& im) { return im.id == id; });
  return it == images.end() ? nullptr : &*it;
}

std::size_t Dataset::annotation_count() const {
  std::size_t n = 0;
  for (const auto& [id, anns] : annotations) n += anns.size();
  return n;
}

namespace {

Dataset parse_annotations_doc(const json& doc, const ClassRegistry& registry,
                              const LoadOptions& options) {
  if (!doc.is_object()) throw ValidationError("annotations: top level must be an object");

  Dataset ds;
  ds.split = options.split;
  std::map<ImageId, std::size_t> image_index;
  for (const auto& im : doc.value("images", json::array())) {
    ImageInfo info;
    info.id = im.at("id").get<ImageId>();
    info.width = im.at("width").get<double>();
    info.height = im.at("height").get<double>();
    info.file_name = im.value("file_name", std::string{});
    if (!(info.width > 0) || !(info.height > 0)) {
      throw ValidationError("annotations: image " + std::to_string(info.id) +
                            " has non-positive size");
    }
    if (!image_index.emplace(info.id, ds.images.size()).second) {
      throw ValidationError("annotations: duplicate image id " + std::to_string(info.id));
    }
    ds.images.push_back(info);
    ds.annotations[info.id];
  }

  // COCO category ids are file-local; map them onto registry ids by name.
  std::map<std::int64_t, std::optional<ClassId>> category;
  std::vector<std::string> unresolved;
  for (const auto& cat : doc.value("categories", json::array())) {
    auto name = cat.at("name").get<std::string>();
    auto resolved = registry.find(name);
    if (!resolved) unresolved.push_back(name);
    category[cat.at("id").get<std::int64_t>()] = resolved;
  }
  if (!unresolved.empty() && options.strict) {
    std::string list;
    for (const auto& n : unresolved) list += (list.empty() ? "" : ", ") + n;
    throw ValidationError("annotations: categories not in registry: " + list);
  }

  std::set<std::int64_t> seen_ids;
  std::size_t dropped = 0;
  for (const auto& a : doc.value("annotations", json::array())) {
    auto ann_id = a.at("id").get<std::int64_t>();
    if (!seen_ids.insert(ann_id).second) {
      throw ValidationError("annotations: duplicate annotation id " + std::to_string(ann_id));
    }
    auto image_id = a.at("image_id").get<ImageId>();
    auto im = image_index.find(image_id);
    if (im == image_index.end()) {
      throw ValidationError("annotations: annotation " + std::to_string(ann_id) +
                            " references missing image " + std::to_string(image_id));
    }
    auto cat = category.find(a.at("category_id").get<std::int64_t>());
    if (cat == category.end()) {
      throw ValidationError("annotations: annotation " + std::to_string(ann_id) +
                            " references undeclared category");
    }
    if (!cat->second) continue;  // unresolved in non-strict mode
    auto bbox = a.at("bbox");
    if (!bbox.is_array() || bbox.size() != 4) {
      throw ValidationError("annotations: annotation " + std::to_string(ann_id) +
                            " bbox must have 4 numbers");
    }
    const auto& info = ds.images[im->second];
    auto box = normalize_box({bbox[0].get<double>(), bbox[1].get<double>(),
                              bbox[2].get<double>(), bbox[3].get<double>()},
                             info.width, info.height);
    if (!box) {
      ++dropped;
      spdlog::warn("annotation {} has zero area after clamping; dropped", ann_id);
      continue;
    }
    ds.annotations[image_id].push_back({*cat->second, *box});
  }
  if (!unresolved.empty()) {
    spdlog::warn("{} categories not in registry were skipped", unresolved.size());
  }
  return ds;
}

}  // namespace

Dataset parse_annotations(const std::string& json_text, const ClassRegistry& registry,
                          const LoadOptions& options) {
  auto doc = parse_json(json_text, "annotations");
  return json_schema_guard("annotations",
                           [&] { return parse_annotations_doc(doc, registry, options); });
}

Dataset load_annotations(const std::filesystem::path& path, const ClassRegistry& registry,
                         const LoadOptions& options) {
  return parse_annotations(read_text_file(path), registry, options);
}

std::string dump_annotations(const Dataset& dataset, const ClassRegistry& registry) {
  json doc;
  doc["images"] = json::array();
  doc["annotations"] = json::array();
  doc["categories"] = json::array();
  for (std::size_t i = 0; i < registry.size(); ++i) {
    doc["categories"].push_back({{"id", i + 1}, {"name", registry.name(static_cast<ClassId>(i))}});
  }
  std::int64_t next_id = 1;
  for (const auto& im : dataset.images) {
    doc["images"].push_back(
        {{"id", im.id}, {"width", im.width}, {"height", im.height}, {"file_name", im.file_name}});
    auto it = dataset.annotations.find(im.id);
    if (it == dataset.annotations.end()) continue;
    for (const auto& ann : it->second) {
      auto px = to_pixels(ann.box, im.width, im.height);
      doc["annotations"].push_back({{"id", next_id++},
                                    {"image_id", im.id},
                                    {"category_id", ann.class_id + 1},
                                    {"bbox", {px.x, px.y, px.w, px.h}}});
    }
  }
  return doc.dump(1);
}

Dataset filter_classes(const Dataset& dataset, const std::set<ClassId>& keep) {
  Dataset out = dataset;
  for (auto& [id, anns] : out.annotations) {
    std::erase_if(anns, [&](const Annotation& a) { return !keep.count(a.class_id); });
  }
  return out;
}

ExemplarSelection select_exemplars(const Dataset& dataset, const TaskState& state,
                                   std::size_t per_class_quota, std::uint64_t seed) {
  if (per_class_quota < 1) throw ValidationError("exemplar quota must be >= 1");
  std::map<ClassId, std::vector<ImageId>> candidates;
  std::map<ImageId, std::size_t> instance_count;
  for (const auto& im : dataset.images) {
    auto it = dataset.annotations.find(im.id);
    if (it == dataset.annotations.end()) continue;
    instance_count[im.id] = it->second.size();
    std::set<ClassId> present;
    for (const auto& a : it->second) present.insert(a.class_id);
    for (auto c : present) candidates[c].push_back(im.id);
  }

  ExemplarSelection sel;
  for (auto cls : state.known) {
    auto it = candidates.find(cls);
    if (it == candidates.end()) {
      spdlog::info("class {} has no instances; no exemplars stored", cls);
      continue;
    }
    auto pool = it->second;
    auto rng = make_stream(seed, "exemplars", static_cast<std::uint64_t>(cls));
    std::shuffle(pool.begin(), pool.end(), rng);
    std::stable_sort(pool.begin(), pool.end(), [&](ImageId a, ImageId b) {
      return instance_count[a] < instance_count[b];
    });
    if (pool.size() > per_class_quota) pool.resize(per_class_quota);
    sel.images.insert(pool.begin(), pool.end());
    sel.per_class[cls] = std::move(pool);
  }
  return sel;
}

TaskState with_exemplars(const TaskState& state, const ExemplarSelection& selection) {
  TaskState out = state;
  out.exemplar_store = selection.per_class;
  return out;
}

}  // namespace owf
