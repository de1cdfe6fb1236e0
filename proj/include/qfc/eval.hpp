// eval.hpp: closed-loop deployment of controllers in the SME simulator.

#pragma once

#include "qfc/checkpoint.hpp"
#include "qfc/dataset.hpp"
#include "qfc/paqs.hpp"
#include "qfc/seqmodel.hpp"
#include "qfc/sme.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace qfc {

enum class ControllerKind { kTransformer, kRnn, kGru, kPaqs, kRandom, kZero };
std::string to_string(ControllerKind k);
ControllerKind controller_kind_from_string(const std::string& s);
bool is_learned(ControllerKind k);

struct InitialStates {
  // kind: pure_haar / mixed_random sample one state per trajectory from
  // `seed`; "fixed" uses `state` for every trajectory.
  std::string kind = "pure_haar";
  std::uint64_t seed = 1;
  DensityMatrix state;  // qubit, for "fixed"
};

struct ExperimentPreset {
  std::string name = "eval";
  SystemModel model;
  PureState system_target;
  InitialStates initial;
  std::size_t n_trajectories = 200;
  std::size_t n_steps = 100;
  double dt = 0.01;
  ControllerKind controller = ControllerKind::kZero;
  std::uint64_t seed = 0;
  std::string checkpoint;  // learned kinds
  ControlGrid grid;        // random and learned kinds; learned kinds use the checkpoint's

  void validate() const;
};

struct FidelityCurve {
  std::vector<double> t;
  std::vector<double> mean_F;
  std::vector<double> stderr_F;
  std::size_t n_traj = 0;
};

struct RolloutResult {
  FidelityCurve curve;
  std::vector<double> final_fidelity;
  std::vector<double> initial_fidelity;
  double mean_final = 0.0;
  double stderr_final = 0.0;
  double mean_initial = 0.0;
  std::size_t n_rejected = 0;
};

// Uniform over the grid's bin centers, one stream per trajectory.
class RandomController : public Controller {
 public:
  RandomController(const ControlGrid& grid, RngStream rng) : grid_(grid), rng_(rng) {}
  void reset(const DensityMatrix&) override {}
  double act(const Observation&) override { return grid_.center(rng_.uniform_index(grid_.n_bins)); }

 private:
  ControlGrid grid_;
  RngStream rng_;
};

class ZeroController : public Controller {
 public:
  void reset(const DensityMatrix&) override {}
  double act(const Observation&) override { return 0.0; }
};

// A learned token policy in the loop. It sees the initial state, the record
// and nothing else; the record is standardized with the training statistics.
class LearnedController : public Controller {
 public:
  LearnedController(const SystemModel& model, std::unique_ptr<TokenPolicy> policy, const ControlGrid& grid,
                    double record_mean, double record_std);
  void reset(const DensityMatrix& rho0) override;
  double act(const Observation& obs) override;
  const std::vector<std::size_t>& tokens() const { return tokens_; }

 private:
  SystemModel model_;
  std::unique_ptr<TokenPolicy> policy_;
  ControlGrid grid_;
  double mean_, std_;
  std::vector<std::size_t> tokens_;
};

// A loaded learned model plus its data normalization.
struct LoadedPolicyModel {
  std::unique_ptr<SequenceModel> model;
  ControlGrid grid;
  double record_mean = 0.0;
  double record_std = 1.0;
  std::string kind;
};
LoadedPolicyModel load_policy_model(const std::filesystem::path& checkpoint_dir);

using ControllerFactory = std::function<std::unique_ptr<Controller>(std::size_t traj_index)>;

// Builds controllers for the preset; learned kinds load the checkpoint once.
ControllerFactory controller_factory(const ExperimentPreset& preset);

std::vector<DensityMatrix> preset_initial_states(const ExperimentPreset& preset);

RolloutResult rollout(const ExperimentPreset& preset, const ControllerFactory& factory, std::size_t workers = 1);
RolloutResult rollout(const ExperimentPreset& preset, std::size_t workers = 1);

struct BenchReport {
  std::size_t n_steps = 0;
  std::size_t repetitions = 0;
  double transformer_seconds = 0.0;   // median per trajectory
  double paqs_seconds = 0.0;          // median per trajectory
  double ratio = 0.0;                 // paqs / transformer
  double noop_simulation_seconds = 0.0;
  double transformer_seconds_rerun = 0.0;
  double paqs_seconds_rerun = 0.0;
  bool stable() const;
};

// Per-trajectory inference cost of the transformer alone and of PaQS with its
// record filter on the same stored record; medians over `repetitions`.
BenchReport bench_inference(const ExperimentPreset& preset, const SequenceModel& transformer, double record_mean,
                            double record_std, std::size_t repetitions = 20);
Json to_json(const BenchReport& r);

// CSV columns t, mean_F, stderr_F; optional SVG line plot.
void export_curve(const FidelityCurve& curve, const std::filesystem::path& csv,
                  const std::filesystem::path& svg = {});
std::string curve_csv(const FidelityCurve& curve);
FidelityCurve parse_curve_csv(const std::string& text);
std::string curves_svg(const std::vector<std::pair<std::string, FidelityCurve>>& curves, const std::string& title);

}  // namespace qfc
