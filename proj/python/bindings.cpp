#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "owf/error.hpp"
#include "owf/geometry.hpp"
#include "owf/json_util.hpp"
#include "owf/losses.hpp"
#include "owf/matching.hpp"
#include "owf/pipeline.hpp"
#include "owf/synth.hpp"

namespace py = pybind11;

namespace {

owf::RunConfig load(const std::string& path, std::optional<std::uint64_t> seed, bool strict_paper,
                    std::optional<std::string> out) {
  std::filesystem::path p(path);
  auto doc = owf::parse_json(owf::read_text_file(p), "run config");
  if (seed) doc["seed"] = *seed;
  auto cfg = owf::parse_run_config(doc.dump(), p.parent_path());
  if (strict_paper) cfg.apply_strict_paper();
  if (out) cfg.output_dir = *out;
  return cfg;
}

void run(const std::string& command, const std::string& config, std::optional<std::uint64_t> seed,
         bool strict_paper, std::optional<std::string> out) {
  auto cfg = load(config, seed, strict_paper, out);
  py::gil_scoped_release release;
  if (command == "align") {
    owf::cmd_align(cfg);
  } else if (command == "train") {
    owf::cmd_train(cfg);
  } else if (command == "eval") {
    owf::cmd_eval(cfg);
  } else if (command == "pipeline") {
    owf::cmd_pipeline(cfg);
  } else {
    throw owf::ValidationError("unknown command '" + command + "'");
  }
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Open-world detection toolkit";

  auto error = py::register_exception<owf::Error>(m, "Error");
  auto validation = py::register_exception<owf::ValidationError>(m, "ValidationError", error.ptr());
  py::register_exception<owf::NumericFault>(m, "NumericFault", error.ptr());
  // ParseError and ConfigError surface as ValidationError
  (void)validation;

  py::class_<owf::Box>(m, "Box")
      .def(py::init<double, double, double, double>(), py::arg("cx"), py::arg("cy"), py::arg("w"), py::arg("h"))
      .def_readwrite("cx", &owf::Box::cx)
      .def_readwrite("cy", &owf::Box::cy)
      .def_readwrite("w", &owf::Box::w)
      .def_readwrite("h", &owf::Box::h)
      .def("area", &owf::Box::area)
      .def("is_valid", &owf::Box::is_valid)
      .def("__eq__", [](const owf::Box& a, const owf::Box& b) { return a == b; })
      .def("__repr__", [](const owf::Box& b) {
        return "Box(" + std::to_string(b.cx) + ", " + std::to_string(b.cy) + ", " + std::to_string(b.w) + ", " +
               std::to_string(b.h) + ")";
      });

  m.def("iou", &owf::iou);
  m.def("giou", &owf::giou);
  m.def("giou_loss", &owf::giou_loss);
  m.def("l1_box_loss", &owf::l1_box_loss);
  m.def(
      "nms",
      [](const std::vector<owf::Box>& boxes, const std::vector<double>& scores, double threshold) {
        if (boxes.size() != scores.size()) throw owf::ValidationError("boxes and scores differ in length");
        std::vector<owf::ScoredBox> dets;
        for (std::size_t i = 0; i < boxes.size(); ++i) dets.push_back({boxes[i], scores[i]});
        return owf::nms(dets, threshold);
      },
      py::arg("boxes"), py::arg("scores"), py::arg("iou_threshold"));

  m.def("focal", &owf::focal, py::arg("p"), py::arg("t"), py::arg("alpha") = 0.25, py::arg("gamma") = 2.0);
  m.def("hungarian", &owf::hungarian, py::arg("cost"), "Column assigned to each row of a rows <= cols cost matrix.");

  m.def(
      "synthetic_corpus",
      [](std::uint64_t seed, std::size_t scenes) {
        auto cfg = owf::default_benchmark_config(seed);
        return owf::dump_corpus(owf::generate(cfg, scenes), cfg.registry());
      },
      py::arg("seed"), py::arg("scenes"), "Scene JSONL of the default synthetic benchmark.");

  m.def("run", &run, py::arg("command"), py::arg("config"), py::arg("seed") = py::none(),
        py::arg("strict_paper") = false, py::arg("out") = py::none(),
        "Runs align, train, eval or pipeline like the command-line tool.");
}
