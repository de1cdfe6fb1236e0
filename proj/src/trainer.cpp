#include "qfc/trainer.hpp"

#include "qfc/fileio.hpp"
#include "qfc/serialize.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace qfc {

namespace {

constexpr std::uint64_t kShuffleStream = 0x73687566ULL;
constexpr std::uint64_t kDropoutStream = 0x64726f70ULL;

std::size_t data_context(const SequenceModel& model, const DatasetManifest& m) {
  return model.context_len() != 0 ? model.context_len() : m.n_steps + 1;
}

std::vector<PreparedSequence> prepare(const SequenceModel& model, const std::filesystem::path& dir,
                                      const DatasetManifest& m, Split split) {
  const std::size_t ctx = data_context(model, m);
  std::vector<PreparedSequence> out;
  for (const SampleRecord& rec : load_split(dir, split)) out.push_back(prepare_sequence(rec, m, ctx));
  return out;
}

BatchScore score_all(const SequenceModel& model, const std::vector<Batch>& batches) {
  BatchScore total;
  for (const Batch& b : batches) {
    const BatchScore s = model.score_batch(b);
    total.loss_sum += s.loss_sum;
    total.correct += s.correct;
    total.count += s.count;
  }
  return total;
}

double mean_loss(const BatchScore& s) {
  return s.count ? s.loss_sum / static_cast<double>(s.count) : std::numeric_limits<double>::quiet_NaN();
}

double accuracy(const BatchScore& s) {
  return s.count ? static_cast<double>(s.correct) / static_cast<double>(s.count) : 0.0;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning_rate must be > 0");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("train: clip_norm must be > 0");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be >= 1");
}

Json to_json(const TrainConfig& c) {
  return Json{{"learning_rate", c.learning_rate}, {"n_epochs", c.n_epochs},
              {"batch_size", c.batch_size},       {"clip_norm", c.clip_norm},
              {"early_stop_patience", c.early_stop_patience}, {"seed", c.seed},
              {"init_checkpoint", c.init_checkpoint}};
}

TrainConfig train_config_from_json(const Json& j, const std::string& where) {
  require_keys(j, {"learning_rate", "n_epochs", "batch_size", "clip_norm", "early_stop_patience", "seed",
                   "init_checkpoint"},
               where);
  TrainConfig c;
  if (j.contains("learning_rate")) c.learning_rate = json_number(j, "learning_rate", where);
  if (j.contains("n_epochs")) c.n_epochs = json_count(j, "n_epochs", where);
  if (j.contains("batch_size")) c.batch_size = json_count(j, "batch_size", where);
  if (j.contains("clip_norm")) c.clip_norm = json_number(j, "clip_norm", where);
  if (j.contains("early_stop_patience")) c.early_stop_patience = json_count(j, "early_stop_patience", where);
  if (j.contains("seed")) c.seed = json_count(j, "seed", where);
  if (j.contains("init_checkpoint")) c.init_checkpoint = json_string(j, "init_checkpoint", where);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

void radam_update(std::span<double> x, std::span<const double> g, std::span<double> m, std::span<double> v,
                  std::size_t t, double lr, const RadamParams& p) {
  if (t == 0) throw std::invalid_argument("radam_update: step count is 1-based");
  const double td = static_cast<double>(t);
  const double b1t = std::pow(p.beta1, td);
  const double b2t = std::pow(p.beta2, td);
  const double rho_inf = 2.0 / (1.0 - p.beta2) - 1.0;
  const double rho_t = rho_inf - 2.0 * td * b2t / (1.0 - b2t);
  const bool rectified = rho_t > 4.0;
  double r = 0.0;
  if (rectified) {
    r = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
    v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
    const double m_hat = m[i] / (1.0 - b1t);
    if (rectified) {
      const double v_hat = std::sqrt(v[i] / (1.0 - b2t));
      x[i] -= lr * r * m_hat / (v_hat + p.eps);
    } else {
      x[i] -= lr * m_hat;
    }
  }
}

void radam_step(ParameterList& params, RadamState& state, double lr, const RadamParams& p) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor.size(), 0.0);
      state.v[i].assign(params[i].tensor.size(), 0.0);
    }
  }
  ++state.t;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params[i].tensor;
    const std::vector<double> g = t.grad();
    radam_update(t.mutable_values(), g, state.m[i], state.v[i], state.t, lr, p);
  }
}

double global_grad_norm(const ParameterList& params) {
  double s = 0.0;
  for (const NamedParameter& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.node()->grad) s += g * g;
  }
  return std::sqrt(s);
}

double clip_global_norm(std::vector<std::vector<double>*>& grads, double max_norm) {
  double s = 0.0;
  for (const auto* g : grads) {
    for (double x : *g) s += x * x;
  }
  const double norm = std::sqrt(s);
  if (!(norm > max_norm)) return 1.0;
  const double scale = max_norm / norm;
  for (auto* g : grads) {
    for (double& x : *g) x *= scale;
  }
  return scale;
}

double clip_global_norm(ParameterList& params, double max_norm) {
  std::vector<std::vector<double>*> grads;
  for (NamedParameter& p : params) {
    if (p.tensor.has_grad()) grads.push_back(&p.tensor.node()->grad);
  }
  return clip_global_norm(grads, max_norm);
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,train_loss,val_loss,val_token_accuracy\n";
  for (const EpochMetrics& e : history) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.val_loss) + "," +
           format_double(e.val_token_accuracy) + "\n";
  }
  return out;
}

BatchScore evaluate_split(const SequenceModel& model, const std::filesystem::path& dataset_dir, Split split,
                          std::size_t batch_size) {
  const DatasetManifest m = load_manifest(dataset_dir);
  const auto seqs = prepare(model, dataset_dir, m, split);
  return score_all(model, make_batches(seqs, batch_size, m.grid.n_bins, nullptr));
}

TrainResult train(SequenceModel& model, const std::filesystem::path& dataset_dir, const TrainConfig& config,
                  const std::filesystem::path& out_dir, std::ostream* log) {
  config.validate();
  const DatasetManifest manifest = load_manifest(dataset_dir);
  if (model.vocab() != manifest.grid.n_bins + 1) {
    throw std::invalid_argument("train: model vocabulary " + std::to_string(model.vocab()) +
                                " does not match the dataset grid (" + std::to_string(manifest.grid.n_bins) +
                                " bins + BOS)");
  }
  const auto train_seqs = prepare(model, dataset_dir, manifest, Split::kTrain);
  const auto val_batches =
      make_batches(prepare(model, dataset_dir, manifest, Split::kVal), config.batch_size, manifest.grid.n_bins, nullptr);
  if (train_seqs.empty() || val_batches.empty()) throw std::runtime_error("train: empty train or validation split");

  TrainResult result;
  result.checkpoint_dir = out_dir / "checkpoint";
  result.metrics_csv = out_dir / "metrics.csv";

  Json metadata;
  metadata["record_mean"] = manifest.record_mean;
  metadata["record_std"] = manifest.record_std;
  metadata["grid"] = to_json(manifest.grid);
  metadata["model"] = to_json(manifest.model);
  metadata["dataset"] = std::filesystem::absolute(dataset_dir).string();
  metadata["train"] = to_json(config);

  const auto save = [&](std::size_t epoch, double val_loss, double val_acc) {
    metadata["epoch"] = epoch;
    metadata["best_val_loss"] = val_loss;
    metadata["best_val_accuracy"] = val_acc;
    save_checkpoint(result.checkpoint_dir, model.kind(), model.architecture(), metadata, model.parameters());
  };

  const BatchScore initial = score_all(model, val_batches);
  result.best_epoch = 0;
  result.best_val_loss = mean_loss(initial);
  result.best_val_accuracy = accuracy(initial);
  if (!std::isfinite(result.best_val_loss)) throw std::runtime_error("train: initial validation loss is not finite");
  save(0, result.best_val_loss, result.best_val_accuracy);
  atomic_write(result.metrics_csv, metrics_csv(result.history));

  ParameterList& params = model.parameters();
  RadamState opt;
  const RngStream shuffle_root(config.seed, kShuffleStream);
  const RngStream dropout_root(config.seed, kDropoutStream);

  for (std::size_t epoch = 1; epoch <= config.n_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    RngStream shuffle = shuffle_root.substream(epoch);
    const std::vector<Batch> batches = make_batches(train_seqs, config.batch_size, manifest.grid.n_bins, &shuffle);
    double loss_sum = 0.0;
    std::size_t loss_n = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      RngStream drop = dropout_root.substream(mix64(epoch) ^ bi);
      ForwardContext ctx;
      ctx.training = true;
      ctx.rng = &drop;
      for (NamedParameter& p : params) p.tensor.zero_grad();
      const double loss = model.fit_batch(batches[bi], ctx, [&]() {
        clip_global_norm(params, config.clip_norm);
        radam_step(params, opt, config.learning_rate);
        for (NamedParameter& p : params) p.tensor.zero_grad();
      });
      if (!std::isfinite(loss)) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(bi) + " (lr " + format_double(config.learning_rate) + ")");
      }
      loss_sum += loss * static_cast<double>(batches[bi].batch_size);
      loss_n += batches[bi].batch_size;
    }
    const BatchScore val = score_all(model, val_batches);
    EpochMetrics em{epoch, loss_sum / static_cast<double>(loss_n), mean_loss(val), accuracy(val)};
    if (!std::isfinite(em.val_loss)) {
      throw std::runtime_error("train: non-finite validation loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(em);
    if (em.val_loss < result.best_val_loss) {
      result.best_epoch = epoch;
      result.best_val_loss = em.val_loss;
      result.best_val_accuracy = em.val_token_accuracy;
      save(epoch, em.val_loss, em.val_token_accuracy);
    }
    atomic_write(result.metrics_csv, metrics_csv(result.history));
    if (log != nullptr) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      *log << "epoch " << epoch << " train_loss " << em.train_loss << " val_loss " << em.val_loss << " val_acc "
           << em.val_token_accuracy << " (" << secs << " s)" << std::endl;
    }
    if (epoch - result.best_epoch > config.early_stop_patience) break;
  }

  // Leave the model holding the best parameters.
  const Checkpoint best = load_checkpoint(result.checkpoint_dir);
  assign_parameters(best, params);
  return result;
}

}  // namespace qfc
