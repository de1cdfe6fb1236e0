// config.hpp: the JSON run configuration read by the command-line tool.
//
// Top-level keys: name, seed, system, grid, dataset, train, eval, paths.
// Unknown keys anywhere are rejected. Relative paths resolve against the
// working directory. One seed drives every stage unless a preset sets its
// own.

#pragma once

#include "qfc/dataset.hpp"
#include "qfc/eval.hpp"
#include "qfc/rnn.hpp"
#include "qfc/serialize.hpp"
#include "qfc/trainer.hpp"
#include "qfc/transformer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace qfc {

struct BenchSettings {
  std::size_t repetitions = 20;
  std::size_t n_steps = 100;
};

struct RunConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  SystemModel system;
  ControlGrid grid;
  DatasetManifest dataset;
  TrainConfig train;
  std::vector<std::string> train_models{"transformer"};
  TransformerConfig transformer;
  RnnConfig rnn;
  RnnConfig gru;
  std::vector<ExperimentPreset> presets;
  BenchSettings bench;
  std::filesystem::path out = "runs/run";
  std::filesystem::path init_checkpoint;  // finetune source

  std::filesystem::path dataset_dir() const { return out / "dataset"; }
  std::filesystem::path model_dir(const std::string& kind) const { return out / "models" / kind; }
  std::filesystem::path checkpoint_dir(const std::string& kind) const { return model_dir(kind) / "checkpoint"; }
  std::filesystem::path eval_dir() const { return out / "eval"; }
};

// `seed_override` replaces the configured seed (flag or QFC_SEED);
// `out_override` replaces paths.out. Throws ConfigError.
RunConfig parse_run_config(const Json& j, std::optional<std::uint64_t> seed_override = std::nullopt,
                           std::optional<std::filesystem::path> out_override = std::nullopt);
RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override = std::nullopt,
                          std::optional<std::filesystem::path> out_override = std::nullopt);

}  // namespace qfc
