// qfc: data generation, training, evaluation and verification from one
// JSON run configuration.

#include "qfc/checkpoint.hpp"
#include "qfc/config.hpp"
#include "qfc/dataset.hpp"
#include "qfc/eval.hpp"
#include "qfc/fileio.hpp"
#include "qfc/seqmodel.hpp"
#include "qfc/trainer.hpp"
#include "qfc/verify.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace qfc;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::size_t workers = 1;
  std::string preset;
  std::vector<std::string> models;
};

std::optional<std::uint64_t> env_seed() {
  const char* s = std::getenv("QFC_SEED");
  if (s == nullptr || *s == '\0') return std::nullopt;
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(s, &used);
    if (used != std::string(s).size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(std::string("QFC_SEED is not an unsigned integer: '") + s + "'");
  }
}

RunConfig load(const Options& o) {
  std::optional<std::uint64_t> seed = o.seed ? o.seed : env_seed();
  std::optional<fs::path> out;
  if (o.out) out = fs::path(*o.out);
  return load_run_config(o.config, seed, out);
}

void require_dataset(const RunConfig& rc) {
  if (!fs::exists(rc.dataset_dir() / "manifest.json")) {
    throw ConfigError("dataset not found: " + rc.dataset_dir().string() + " (run gen-data first)");
  }
}

void require_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw CheckpointError("checkpoint not found: " + dir.string());
}

void report_training(const std::string& kind, const TrainResult& r) {
  std::cout << kind << ": best epoch " << r.best_epoch << ", val loss " << format_double(r.best_val_loss)
            << ", val token accuracy " << format_double(r.best_val_accuracy) << "\n"
            << "  checkpoint " << r.checkpoint_dir.string() << "\n  metrics " << r.metrics_csv.string() << "\n";
}

int cmd_gen_data(const Options& o) {
  const RunConfig rc = load(o);
  const DatasetManifest m = generate_dataset(rc.dataset, rc.dataset_dir(), o.workers);
  std::cout << "dataset " << rc.dataset_dir().string() << ": " << m.summary.n_records << " records, "
            << m.summary.n_rejected << " rejected, mean final PaQS fidelity "
            << format_double(m.summary.mean_final_fidelity) << ", labels in grid range "
            << format_double(1.0 - m.summary.clamped_fraction) << "\n";
  if (!m.summary.in_range_ok()) {
    std::cerr << "warning: fewer than 98% of labels fall inside the control grid\n";
  }
  return 0;
}

std::unique_ptr<SequenceModel> fresh_model(const RunConfig& rc, const std::string& kind) {
  if (kind == "transformer") return make_transformer_model(rc.transformer, rc.train.seed);
  if (kind == "rnn") return make_recurrent_model(rc.rnn, rc.train.seed);
  if (kind == "gru") return make_recurrent_model(rc.gru, rc.train.seed);
  throw ConfigError("unknown model '" + kind + "'");
}

int cmd_train(const Options& o) {
  const RunConfig rc = load(o);
  require_dataset(rc);
  const std::vector<std::string> kinds = o.models.empty() ? rc.train_models : o.models;
  for (const std::string& kind : kinds) {
    auto model = fresh_model(rc, kind);
    TrainConfig tc = rc.train;
    tc.init_checkpoint.clear();
    std::cout << "training " << kind << "\n";
    report_training(kind, train(*model, rc.dataset_dir(), tc, rc.model_dir(kind), &std::cout));
  }
  return 0;
}

int cmd_finetune(const Options& o) {
  const RunConfig rc = load(o);
  if (rc.train.init_checkpoint.empty()) throw ConfigError("finetune needs paths.init_checkpoint");
  require_dataset(rc);
  const fs::path src = rc.train.init_checkpoint;
  require_checkpoint(src);
  const Checkpoint ckpt = load_checkpoint(src);
  auto model = model_from_checkpoint(ckpt);
  std::cout << "fine-tuning " << model->kind() << " from " << src.string() << "\n";
  report_training(model->kind(), train(*model, rc.dataset_dir(), rc.train, rc.model_dir(model->kind()), &std::cout));
  return 0;
}

std::vector<ExperimentPreset> selected_presets(const RunConfig& rc, const std::string& name) {
  std::vector<ExperimentPreset> out;
  for (const auto& p : rc.presets) {
    if (name.empty() || p.name == name) out.push_back(p);
  }
  if (out.empty()) {
    throw ConfigError(name.empty() ? std::string("config has no eval presets") : "no preset named '" + name + "'");
  }
  return out;
}

int cmd_eval(const Options& o) {
  const RunConfig rc = load(o);
  const auto presets = selected_presets(rc, o.preset);
  for (const auto& p : presets) {
    if (is_learned(p.controller)) require_checkpoint(p.checkpoint);
  }
  const fs::path dir = rc.eval_dir();
  Json summary = Json::array();
  std::vector<std::pair<std::string, FidelityCurve>> curves;
  for (const auto& p : presets) {
    const RolloutResult r = rollout(p, controller_factory(p), o.workers);
    export_curve(r.curve, dir / (p.name + ".csv"), dir / (p.name + ".svg"));
    curves.emplace_back(p.name, r.curve);
    std::cout << p.name << " (" << to_string(p.controller) << "): mean final F " << format_double(r.mean_final)
              << " +- " << format_double(r.stderr_final) << ", mean initial F " << format_double(r.mean_initial)
              << ", rejected " << r.n_rejected << "\n";
    summary.push_back({{"name", p.name},
                       {"controller", to_string(p.controller)},
                       {"eta", p.model.eta},
                       {"epsilon", p.model.epsilon},
                       {"n_trajectories", p.n_trajectories},
                       {"n_steps", p.n_steps},
                       {"mean_final_fidelity", r.mean_final},
                       {"stderr_final_fidelity", r.stderr_final},
                       {"mean_initial_fidelity", r.mean_initial},
                       {"n_rejected", r.n_rejected}});
  }
  atomic_write(dir / "curves.svg", curves_svg(curves, rc.name));
  atomic_write(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << "wrote " << dir.string() << "\n";
  return 0;
}

int cmd_bench(const Options& o) {
  const RunConfig rc = load(o);
  std::optional<ExperimentPreset> preset;
  for (const auto& p : rc.presets) {
    if (p.controller == ControllerKind::kTransformer && (o.preset.empty() || p.name == o.preset)) {
      preset = p;
      break;
    }
  }
  if (!preset) throw ConfigError("bench needs a transformer preset");
  require_checkpoint(preset->checkpoint);
  preset->n_steps = rc.bench.n_steps;
  const LoadedPolicyModel loaded = load_policy_model(preset->checkpoint);
  const BenchReport rep =
      bench_inference(*preset, *loaded.model, loaded.record_mean, loaded.record_std, rc.bench.repetitions);
  const fs::path path = rc.out / "bench.json";
  atomic_write(path, to_json(rep).dump(2) + "\n");
  std::cout << "transformer " << format_double(rep.transformer_seconds) << " s/trajectory, PaQS with filter "
            << format_double(rep.paqs_seconds) << " s/trajectory, ratio " << format_double(rep.ratio)
            << (rep.stable() ? "" : " (unstable timing)") << "\nwrote " << path.string() << "\n";
  return 0;
}

int cmd_verify(const Options& o) {
  const RunConfig rc = load(o);
  VerifyOptions vo;
  vo.seed = rc.seed;
  vo.workers = o.workers;
  const auto results = run_verify_suite(vo, &std::cout);
  std::size_t failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  std::cout << (failed == 0 ? "all checks passed" : std::to_string(failed) + " check(s) failed") << "\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Quantum feedback control with sequence models"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Run configuration (JSON)")->required();
    sub->add_option("--seed", o.seed, "Seed override (QFC_SEED is used when absent)");
    sub->add_option("--out", o.out, "Output root, replaces paths.out");
    sub->add_option("--workers", o.workers, "Parallel trajectory workers")->check(CLI::PositiveNumber);
  };
  CLI::App* gen = app.add_subcommand("gen-data", "Generate the PaQS-labelled trajectory dataset");
  CLI::App* tr = app.add_subcommand("train", "Train models from scratch");
  CLI::App* ft = app.add_subcommand("finetune", "Continue training from paths.init_checkpoint");
  CLI::App* ev = app.add_subcommand("eval", "Closed-loop evaluation of the configured presets");
  CLI::App* be = app.add_subcommand("bench", "Inference timing, transformer vs PaQS with filter");
  CLI::App* ve = app.add_subcommand("verify", "Run the invariant suites");
  for (CLI::App* s : {gen, tr, ft, ev, be, ve}) common(s);
  tr->add_option("--model", o.models, "Subset of train.models to train");
  ev->add_option("--preset", o.preset, "Only this preset");
  be->add_option("--preset", o.preset, "Transformer preset to time");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*tr) return cmd_train(o);
    if (*ft) return cmd_finetune(o);
    if (*ev) return cmd_eval(o);
    if (*be) return cmd_bench(o);
    if (*ve) return cmd_verify(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
