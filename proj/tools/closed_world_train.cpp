// Trains with a loss path built without the down-weight terms
// (OWF_CLOSED_WORLD_ONLY). Used to check that a run with teacher and
// pseudo-labels disabled is bit-identical to the full build.
//
//   owf_closed_world_train <corpus.jsonl> <options.json> <checkpoint.out>
//
// options.json: {"categories", "num_known", "queries", "dim", "seed",
//                "epochs", "learning_rate", "grad_clip"}

#include <cstdio>
#include <set>

#include "owf/json_util.hpp"
#include "owf/synth.hpp"
#include "owf/trainer.hpp"

int main(int argc, char** argv) {
  if (argc != 4) {
    std::fprintf(stderr, "usage: %s <corpus.jsonl> <options.json> <checkpoint.out>\n", argv[0]);
    return 2;
  }
  try {
    auto opts = owf::parse_json(owf::read_text_file(argv[2]), "options");
    owf::ClassRegistry registry(opts.at("categories").get<std::vector<std::string>>());
    auto corpus = owf::load_corpus(argv[1], registry);
    auto num_known = opts.at("num_known").get<std::size_t>();

    std::set<owf::ClassId> known;
    for (std::size_t c = 0; c < num_known; ++c) known.insert(static_cast<owf::ClassId>(c));
    std::vector<owf::TrainingSample> samples;
    for (const auto& scene : corpus.scenes) {
      owf::TrainingSample s{scene.tokens, {}};
      for (const auto& o : scene.restricted(known)) s.labels.push_back(owf::Label::ground_truth(o.category, o.box));
      samples.push_back(std::move(s));
    }

    owf::TrainOptions to;
    to.epochs = opts.at("epochs").get<std::size_t>();
    to.learning_rate = opts.at("learning_rate").get<double>();
    to.grad_clip = opts.at("grad_clip").get<double>();
    to.seed = opts.at("seed").get<std::uint64_t>();
    to.use_pseudo = false;

    owf::DetectorConfig dc{opts.at("queries").get<std::size_t>(), opts.at("dim").get<std::size_t>(),
                           static_cast<std::size_t>(corpus.scenes.at(0).tokens.cols()), num_known, to.seed};
    auto result = owf::train(owf::init_params(dc), samples, to);
    if (result.fault) return 3;
    owf::save_checkpoint(result.params, argv[3]);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  }
  return 0;
}
