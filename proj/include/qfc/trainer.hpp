// trainer.hpp: supervised training on PaQS labels with RAdam, global-norm
// clipping and early stopping on validation loss.

#pragma once

#include "qfc/checkpoint.hpp"
#include "qfc/seqmodel.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace qfc {

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t n_epochs = 30;
  std::size_t batch_size = 16;
  double clip_norm = 1.0;
  std::size_t early_stop_patience = 10;
  std::uint64_t seed = 0;
  std::string init_checkpoint;  // fine-tuning when non-empty

  void validate() const;
};

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j, const std::string& where = "train");

struct RadamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct RadamState {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;
};

// One RAdam update of x in place with step count t (1-based):
//   m = b1 m + (1 - b1) g, v = b2 v + (1 - b2) g^2, m_hat = m / (1 - b1^t),
//   rho_inf = 2 / (1 - b2) - 1, rho_t = rho_inf - 2 t b2^t / (1 - b2^t);
//   rho_t > 4: x -= lr r_t m_hat / (sqrt(v / (1 - b2^t)) + eps) with
//     r_t = sqrt((rho_t - 4)(rho_t - 2) rho_inf / ((rho_inf - 4)(rho_inf - 2) rho_t)),
//   otherwise x -= lr m_hat.
void radam_update(std::span<double> x, std::span<const double> g, std::span<double> m, std::span<double> v,
                  std::size_t t, double lr, const RadamParams& p = {});

// Applies radam_update to every parameter using its accumulated gradient.
void radam_step(ParameterList& params, RadamState& state, double lr, const RadamParams& p = {});

double global_grad_norm(const ParameterList& params);
// Scales all gradients by max_norm / norm when norm > max_norm; returns the
// scale applied.
double clip_global_norm(ParameterList& params, double max_norm);
double clip_global_norm(std::vector<std::vector<double>*>& grads, double max_norm);

struct EpochMetrics {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_token_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;  // 0 = the initial parameters
  double best_val_loss = 0.0;
  double best_val_accuracy = 0.0;
  std::filesystem::path checkpoint_dir;
  std::filesystem::path metrics_csv;
};

// Trains `model` on the dataset and writes <out>/checkpoint (best
// validation loss) and <out>/metrics.csv. Throws std::runtime_error on a
// non-finite loss.
TrainResult train(SequenceModel& model, const std::filesystem::path& dataset_dir, const TrainConfig& config,
                  const std::filesystem::path& out_dir, std::ostream* log = nullptr);

// Validation loss and token accuracy over a split.
BatchScore evaluate_split(const SequenceModel& model, const std::filesystem::path& dataset_dir, Split split,
                          std::size_t batch_size);

std::string metrics_csv(const std::vector<EpochMetrics>& history);

}  // namespace qfc
