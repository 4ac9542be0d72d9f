#include <cstdio>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "owf/json_util.hpp"
#include "owf/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 2;
constexpr int kNumeric = 3;

owf::RunConfig load(const std::string& path, std::optional<std::uint64_t> seed, bool strict,
                    const std::string& out) {
  std::filesystem::path p(path);
  auto doc = owf::parse_json(owf::read_text_file(p), "run config");
  if (seed) doc["seed"] = *seed;
  auto cfg = owf::parse_run_config(doc.dump(), p.parent_path());
  if (strict) cfg.apply_strict_paper();
  if (!out.empty()) cfg.output_dir = out;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Open-world detection with teacher-assisted down-weight training"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool strict = false;
  bool verbose = false;
  std::string out;
  for (const char* name : {"align", "train", "eval", "pipeline"}) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "Run config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_flag("--strict-paper", strict, "Disable every guard not in the original method");
    sub->add_option("--out", out, "Output directory");
    sub->add_flag("-v,--verbose", verbose, "Debug logging");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kValidation;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    auto cfg = load(config_path, seed, strict, out);
    if (command == "align") {
      owf::cmd_align(cfg);
    } else if (command == "train") {
      owf::cmd_train(cfg);
    } else if (command == "eval") {
      owf::cmd_eval(cfg);
    } else {
      owf::cmd_pipeline(cfg);
    }
  } catch (const owf::NumericFault& e) {
    spdlog::error("numeric fault: {}", e.what());
    return kNumeric;
  } catch (const owf::Error& e) {
    spdlog::error("{}", e.what());
    return kValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    spdlog::error("{}", e.what());
    return kValidation;
  }
  return kOk;
}
