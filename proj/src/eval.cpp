#include "qfc/eval.hpp"

#include "qfc/fileio.hpp"
#include "qfc/serialize.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

namespace qfc {

namespace {

constexpr std::uint64_t kSimStream = 0x73696dULL;
constexpr std::uint64_t kRandomStream = 0x726e64ULL;

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  if (n == 0) return 0.0;
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

template <typename F>
double seconds(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::kTransformer: return "transformer";
    case ControllerKind::kRnn: return "rnn";
    case ControllerKind::kGru: return "gru";
    case ControllerKind::kPaqs: return "paqs";
    case ControllerKind::kRandom: return "random";
    case ControllerKind::kZero: return "zero";
  }
  return "zero";
}

ControllerKind controller_kind_from_string(const std::string& s) {
  for (ControllerKind k : {ControllerKind::kTransformer, ControllerKind::kRnn, ControllerKind::kGru,
                           ControllerKind::kPaqs, ControllerKind::kRandom, ControllerKind::kZero}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown controller kind '" + s + "'");
}

bool is_learned(ControllerKind k) {
  return k == ControllerKind::kTransformer || k == ControllerKind::kRnn || k == ControllerKind::kGru;
}

void ExperimentPreset::validate() const {
  model.validate();
  grid.validate();
  if (n_trajectories == 0) throw std::invalid_argument("preset " + name + ": n_trajectories must be >= 1");
  if (!(dt > 0.0) || dt * model.kappa > 0.05) throw std::invalid_argument("preset " + name + ": need 0 < dt*kappa <= 0.05");
  if (system_target.dim() != 2) throw std::invalid_argument("preset " + name + ": target must be a qubit state");
  if (initial.kind != "pure_haar" && initial.kind != "mixed_random" && initial.kind != "fixed") {
    throw std::invalid_argument("preset " + name + ": unknown initial kind '" + initial.kind + "'");
  }
  if (initial.kind == "fixed" && initial.state.dim() != 2) {
    throw std::invalid_argument("preset " + name + ": fixed initial state must be a qubit density matrix");
  }
  if (is_learned(controller) && checkpoint.empty()) {
    throw std::invalid_argument("preset " + name + ": controller " + to_string(controller) + " needs a checkpoint");
  }
}

LearnedController::LearnedController(const SystemModel& model, std::unique_ptr<TokenPolicy> policy,
                                     const ControlGrid& grid, double record_mean, double record_std)
    : model_(model), policy_(std::move(policy)), grid_(grid), mean_(record_mean), std_(record_std) {
  if (!(std_ > 0.0)) throw std::invalid_argument("LearnedController: record_std must be positive");
}

void LearnedController::reset(const DensityMatrix& rho0) {
  const auto f = state_features(model_, rho0);
  policy_->reset(f);
  tokens_.clear();
}

double LearnedController::act(const Observation& obs) {
  if (obs.record.empty()) throw std::invalid_argument("LearnedController: empty record");
  const double r = (obs.record.back() - mean_) / std_;
  const std::size_t tok = policy_->step(r);
  if (tok >= grid_.n_bins) {
    // BOS is never a valid action; treat it as no control.
    tokens_.push_back(tok);
    return 0.0;
  }
  tokens_.push_back(tok);
  return detokenize_lambda(grid_, tok);
}

LoadedPolicyModel load_policy_model(const std::filesystem::path& checkpoint_dir) {
  const Checkpoint ck = load_checkpoint(checkpoint_dir);
  LoadedPolicyModel out;
  out.kind = ck.kind;
  try {
    out.grid = control_grid_from_json(ck.metadata.at("grid"), "checkpoint.metadata.grid");
    out.record_mean = ck.metadata.at("record_mean").get<double>();
    out.record_std = ck.metadata.at("record_std").get<double>();
  } catch (const Json::exception& e) {
    throw CheckpointError("checkpoint " + checkpoint_dir.string() + " lacks normalization metadata: " + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
  out.model = model_from_checkpoint(ck);
  if (out.model->vocab() != out.grid.n_bins + 1) throw CheckpointError("checkpoint vocabulary does not match its grid");
  return out;
}

ControllerFactory controller_factory(const ExperimentPreset& preset) {
  const PureState target = target_state(preset.model, preset.system_target);
  switch (preset.controller) {
    case ControllerKind::kZero:
      return [](std::size_t) { return std::make_unique<ZeroController>(); };
    case ControllerKind::kRandom: {
      const RngStream root(preset.seed, kRandomStream);
      const ControlGrid grid = preset.grid;
      return [root, grid](std::size_t i) { return std::make_unique<RandomController>(grid, root.substream(i)); };
    }
    case ControllerKind::kPaqs: {
      const SystemModel model = preset.model;
      return [model, target](std::size_t) {
        return std::make_unique<PaqsController>(model, target, PaqsRule::kLocallyOptimal, PaqsFilter::kFromRecord);
      };
    }
    default: break;
  }
  auto loaded = std::make_shared<LoadedPolicyModel>(load_policy_model(preset.checkpoint));
  if (loaded->kind != to_string(preset.controller)) {
    throw CheckpointError("preset " + preset.name + " asks for a " + to_string(preset.controller) +
                          " controller but " + preset.checkpoint + " holds a " + loaded->kind);
  }
  const std::size_t ctx = loaded->model->context_len();
  if (ctx != 0 && preset.n_steps + 1 > ctx) {
    throw std::invalid_argument("preset " + preset.name + ": " + std::to_string(preset.n_steps) +
                                " steps exceed the model context of " + std::to_string(ctx));
  }
  const SystemModel model = preset.model;
  return [loaded, model](std::size_t) {
    return std::make_unique<LearnedController>(model, loaded->model->policy(), loaded->grid, loaded->record_mean,
                                               loaded->record_std);
  };
}

std::vector<DensityMatrix> preset_initial_states(const ExperimentPreset& preset) {
  std::vector<DensityMatrix> qubits;
  if (preset.initial.kind == "fixed") {
    qubits.assign(preset.n_trajectories, preset.initial.state);
  } else {
    RngStream rng(preset.initial.seed, 0x696e6974ULL);
    qubits = sample_initial_states(preset.n_trajectories, rng, initial_kind_from_string(preset.initial.kind));
  }
  std::vector<DensityMatrix> out;
  out.reserve(qubits.size());
  for (const DensityMatrix& q : qubits) out.push_back(lift_initial_state(preset.model, q));
  return out;
}

RolloutResult rollout(const ExperimentPreset& preset, const ControllerFactory& factory, std::size_t workers) {
  preset.validate();
  const PureState target = target_state(preset.model, preset.system_target);
  const std::vector<DensityMatrix> states = preset_initial_states(preset);
  const std::size_t n = preset.n_trajectories;
  const RngStream sim_root(preset.seed, kSimStream);

  std::vector<std::vector<double>> fid(n);
  std::vector<char> rejected(n, 0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  const auto run = [&]() {
    try {
      for (std::size_t i = next++; i < n; i = next++) {
        std::unique_ptr<Controller> ctrl = factory(i);
        try {
          fid[i] = simulate(preset.model, states[i], target, *ctrl, preset.n_steps, preset.dt, sim_root.substream(i))
                       .fidelity;
        } catch (const TrajectoryRejected&) {
          rejected[i] = 1;
        }
      }
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = n;
    }
  };
  const std::size_t lanes = std::max<std::size_t>(1, std::min(workers, n));
  if (lanes == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < lanes; ++i) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  RolloutResult res;
  FidelityCurve& c = res.curve;
  const std::size_t len = preset.n_steps + 1;
  std::vector<double> sum(len, 0.0), sq(len, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (rejected[i]) {
      ++res.n_rejected;
      continue;
    }
    for (std::size_t k = 0; k < len; ++k) {
      sum[k] += fid[i][k];
      sq[k] += fid[i][k] * fid[i][k];
    }
    res.initial_fidelity.push_back(fid[i].front());
    res.final_fidelity.push_back(fid[i].back());
  }
  const std::size_t m = res.final_fidelity.size();
  if (m == 0) throw std::runtime_error("rollout " + preset.name + ": every trajectory was rejected");
  c.n_traj = m;
  for (std::size_t k = 0; k < len; ++k) {
    const double mu = sum[k] / static_cast<double>(m);
    double var = 0.0;
    if (m > 1) var = std::max(0.0, (sq[k] - static_cast<double>(m) * mu * mu) / static_cast<double>(m - 1));
    c.t.push_back(static_cast<double>(k) * preset.dt);
    c.mean_F.push_back(mu);
    c.stderr_F.push_back(std::sqrt(var / static_cast<double>(m)));
  }
  res.mean_final = c.mean_F.back();
  res.stderr_final = c.stderr_F.back();
  res.mean_initial = c.mean_F.front();
  return res;
}

RolloutResult rollout(const ExperimentPreset& preset, std::size_t workers) {
  return rollout(preset, controller_factory(preset), workers);
}

bool BenchReport::stable() const {
  const auto close = [](double a, double b) { return std::abs(a - b) < 0.5 * std::max(a, b); };
  return close(transformer_seconds, transformer_seconds_rerun) && close(paqs_seconds, paqs_seconds_rerun);
}

BenchReport bench_inference(const ExperimentPreset& preset, const SequenceModel& transformer, double record_mean,
                            double record_std, std::size_t repetitions) {
  preset.validate();
  if (repetitions < 20) throw std::invalid_argument("bench_inference: need at least 20 repetitions");
  if (transformer.context_len() != 0 && preset.n_steps + 1 > transformer.context_len()) {
    throw std::invalid_argument("bench_inference: horizon exceeds the model context");
  }
  const PureState target = target_state(preset.model, preset.system_target);
  const DensityMatrix rho0 = preset_initial_states(preset).front();
  ZeroController zero;
  // A stored record to replay; generating it is not timed.
  const Trajectory stored =
      simulate(preset.model, rho0, target, zero, preset.n_steps, preset.dt, RngStream(preset.seed, kSimStream));
  const auto features = state_features(preset.model, rho0);
  std::vector<double> standardized;
  for (double dr : stored.dr) standardized.push_back((dr - record_mean) / record_std);

  volatile std::size_t sink = 0;
  std::unique_ptr<TokenPolicy> policy = transformer.policy();
  const auto time_transformer = [&]() {
    return seconds([&]() {
      policy->reset(features);
      for (double r : standardized) sink = sink + policy->step(r);
    });
  };
  PaqsController paqs(preset.model, target, PaqsRule::kLocallyOptimal, PaqsFilter::kFromRecord);
  volatile double dsink = 0.0;
  const auto time_paqs = [&]() {
    return seconds([&]() {
      paqs.reset(rho0);
      for (std::size_t k = 0; k < stored.dr.size(); ++k) {
        Observation obs;
        obs.step = k;
        obs.record = std::span<const double>(stored.dr.data(), k + 1);
        obs.dt = preset.dt;
        dsink = dsink + paqs.act(obs);
      }
    });
  };
  const auto time_noop = [&]() {
    return seconds([&]() {
      ZeroController z;
      const Trajectory tr =
          simulate(preset.model, rho0, target, z, preset.n_steps, preset.dt, RngStream(preset.seed, kSimStream));
      dsink = dsink + tr.fidelity.back();
    });
  };
  const auto med = [repetitions](const auto& f) {
    std::vector<double> xs;
    for (std::size_t i = 0; i < repetitions; ++i) xs.push_back(f());
    return median(xs);
  };
  time_transformer();
  time_paqs();
  BenchReport r;
  r.n_steps = preset.n_steps;
  r.repetitions = repetitions;
  r.transformer_seconds = med(time_transformer);
  r.paqs_seconds = med(time_paqs);
  r.noop_simulation_seconds = med(time_noop);
  r.transformer_seconds_rerun = med(time_transformer);
  r.paqs_seconds_rerun = med(time_paqs);
  r.ratio = r.paqs_seconds / r.transformer_seconds;
  return r;
}

Json to_json(const BenchReport& r) {
  return Json{{"n_steps", r.n_steps},
              {"repetitions", r.repetitions},
              {"transformer_seconds_per_trajectory", r.transformer_seconds},
              {"paqs_seconds_per_trajectory", r.paqs_seconds},
              {"ratio_paqs_over_transformer", r.ratio},
              {"noop_simulation_seconds", r.noop_simulation_seconds},
              {"transformer_seconds_rerun", r.transformer_seconds_rerun},
              {"paqs_seconds_rerun", r.paqs_seconds_rerun},
              {"stable", r.stable()}};
}

std::string curve_csv(const FidelityCurve& curve) {
  std::string out = "t,mean_F,stderr_F\n";
  for (std::size_t i = 0; i < curve.t.size(); ++i) {
    out += format_double(curve.t[i]) + "," + format_double(curve.mean_F[i]) + "," + format_double(curve.stderr_F[i]) +
           "\n";
  }
  return out;
}

FidelityCurve parse_curve_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "t,mean_F,stderr_F") throw std::runtime_error("curve CSV: bad header");
  FidelityCurve c;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string a, b, d;
    if (!std::getline(row, a, ',') || !std::getline(row, b, ',') || !std::getline(row, d)) {
      throw std::runtime_error("curve CSV: malformed row '" + line + "'");
    }
    c.t.push_back(std::stod(a));
    c.mean_F.push_back(std::stod(b));
    c.stderr_F.push_back(std::stod(d));
  }
  return c;
}

std::string curves_svg(const std::vector<std::pair<std::string, FidelityCurve>>& curves, const std::string& title) {
  const double w = 640, h = 400, left = 60, right = 150, top = 30, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  double tmax = 0.0;
  for (const auto& [name, c] : curves) {
    if (!c.t.empty()) tmax = std::max(tmax, c.t.back());
  }
  if (tmax <= 0.0) tmax = 1.0;
  const auto px = [&](double t) { return left + pw * t / tmax; };
  const auto py = [&](double f) { return top + ph * (1.0 - std::clamp(f, 0.0, 1.0)); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f"};

  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
    << " " << h << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title)
    << "</text>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph
    << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double f = 0.25 * i;
    s << "<text x=\"" << left - 8 << "\" y=\"" << py(f) + 4 << "\" font-family=\"sans-serif\" font-size=\"11\" "
      << "text-anchor=\"end\">" << f << "</text>\n";
    const double t = tmax * 0.25 * i;
    s << "<text x=\"" << px(t) << "\" y=\"" << top + ph + 16 << "\" font-family=\"sans-serif\" font-size=\"11\" "
      << "text-anchor=\"middle\">" << t << "</text>\n";
  }
  s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 12 << "\" font-family=\"sans-serif\" font-size=\"12\" "
    << "text-anchor=\"middle\">t (1/kappa)</text>\n";
  s << "<text x=\"16\" y=\"" << top + ph / 2 << "\" font-family=\"sans-serif\" font-size=\"12\" "
    << "transform=\"rotate(-90 16 " << top + ph / 2 << ")\" text-anchor=\"middle\">fidelity</text>\n";
  for (std::size_t k = 0; k < curves.size(); ++k) {
    const auto& [name, c] = curves[k];
    const char* color = colors[k % 6];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < c.t.size(); ++i) s << (i ? " " : "") << px(c.t[i]) << "," << py(c.mean_F[i]);
    s << "\"/>\n";
    const double ly = top + 16.0 * static_cast<double>(k) + 8;
    s << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 30 << "\" y2=\"" << ly
      << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    s << "<text x=\"" << left + pw + 35 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"11\">"
      << xml_escape(name) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void export_curve(const FidelityCurve& curve, const std::filesystem::path& csv, const std::filesystem::path& svg) {
  atomic_write(csv, curve_csv(curve));
  if (!svg.empty()) atomic_write(svg, curves_svg({{"mean F", curve}}, svg.stem().string()));
}

}  // namespace qfc
