#include "qfc/verify.hpp"

#include "qfc/dataset.hpp"
#include "qfc/eval.hpp"
#include "qfc/paqs.hpp"
#include "qfc/rnn.hpp"
#include "qfc/sme.hpp"
#include "qfc/transformer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numbers>
#include <ostream>
#include <sstream>
#include <thread>

namespace qfc {

namespace {

using Clock = std::chrono::steady_clock;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

PureState fig_target() {
  CVector v(2);
  v << Complex(1.0, 0.0), Complex(0.0, 1.0);
  return PureState::normalized(v);
}

template <typename Fn>
CheckResult timed(int id, std::string name, Fn&& fn) {
  CheckResult r;
  r.id = id;
  r.name = std::move(name);
  const auto t0 = Clock::now();
  try {
    fn(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

// Runs fn(i) for i in [0, n) over `workers` threads.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Tensor random_tensor(Shape shape, RngStream& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_size(shape));
  for (double& x : v) x = scale * rng.normal();
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// sum(t * W) with W fixed by `seed`, so every output coordinate matters.
Tensor probe(const Tensor& t, std::uint64_t seed) {
  RngStream rng(seed, 0x70726f6265ULL);
  return sum(mul(t, random_tensor(t.shape(), rng, 1.0, false)));
}

// Privileged PaQS that also checks the exact rotation at every step.
class OracleCheckingController : public Controller {
 public:
  OracleCheckingController(const SystemModel& model, const PureState& target)
      : inner_(model, target, PaqsRule::kLocallyOptimal, PaqsFilter::kTrueState),
        target_(target),
        hf_(feedback_generator(model)),
        grid_(theta_grid(-std::numbers::pi, std::numbers::pi, 1e-4)) {}

  void reset(const DensityMatrix& rho0) override { inner_.reset(rho0); }
  bool privileged() const override { return true; }

  double act(const Observation& obs) override {
    const DensityMatrix& post = *obs.true_state;
    const OptimalRotation opt = optimal_rotation(post, target_, hf_);
    if (!opt.saturated && opt.gain > 1e-6) {
      ++checked;
      const double brute = brute_force_theta(post, target_, hf_, grid_);
      double d = std::abs(opt.theta - brute);
      d = std::min(d, 2.0 * std::numbers::pi - d);
      max_theta_err = std::max(max_theta_err, d);
      const double h = 1e-5;
      const double slope = (rotated_fidelity(post, target_, hf_, opt.theta + h) -
                            rotated_fidelity(post, target_, hf_, opt.theta - h)) /
                           (2.0 * h);
      max_slope = std::max(max_slope, std::abs(slope));
    }
    return inner_.act(obs);
  }

  std::size_t checked = 0;
  double max_theta_err = 0.0;
  double max_slope = 0.0;

 private:
  PaqsController inner_;
  PureState target_;
  CMatrix hf_;
  std::vector<double> grid_;
};

struct GradCase {
  std::string name;
  double error = 0.0;
};

TransformerConfig check_transformer_config() {
  TransformerConfig c;  // desk dimensions
  c.dropout = 0.0;
  return c;
}

}  // namespace

std::string format_check(const CheckResult& r) {
  std::ostringstream os;
  os << (r.passed ? "PASS" : "FAIL") << " criterion " << r.id << ": " << r.name << " | " << r.detail << " ["
     << fmt("%.1f", r.seconds) << " s]";
  return os.str();
}

CheckResult verify_sme_lindblad(const VerifyOptions& opts) {
  return timed(1, "SME trajectory average matches Lindblad", [&](CheckResult& r) {
    SystemModel model;
    model.epsilon = 0.3;
    const std::size_t n_traj = 2000, n_steps = 100;
    const double dt = 0.01;
    CVector one(2);
    one << 0.0, 1.0;
    const DensityMatrix rho0{PureState(one)};
    const PureState target(one);

    std::vector<std::vector<CMatrix>> states(n_traj);
    const RngStream base(opts.seed, 0x736d656c696eULL);
    parallel_for(n_traj, opts.workers, [&](std::size_t i) {
      ZeroController zero;
      SimulateOptions so;
      so.keep_states = true;
      Trajectory tr = simulate(model, rho0, target, zero, n_steps, dt, base.substream(i), so);
      states[i].reserve(tr.states.size());
      for (const auto& s : tr.states) states[i].push_back(s.mat());
    });
    const auto exact = lindblad_solve(model, rho0, {}, n_steps, dt);
    double worst = 0.0;
    std::size_t worst_t = 0;
    for (std::size_t t = 0; t <= n_steps; ++t) {
      CMatrix avg = CMatrix::Zero(2, 2);
      for (std::size_t i = 0; i < n_traj; ++i) avg += states[i][t];
      avg /= static_cast<double>(n_traj);
      const double e = (avg - exact[t].mat()).cwiseAbs().maxCoeff();
      if (e > worst) {
        worst = e;
        worst_t = t;
      }
    }
    r.passed = worst <= 0.02;
    r.detail = "max element deviation " + fmt("%.4g", worst) + " at step " + std::to_string(worst_t) +
               " (tol 0.02), " + std::to_string(n_traj) + " trajectories";
  });
}

CheckResult verify_decay() {
  return timed(2, "uncontrolled decay exp(-kappa t)", [&](CheckResult& r) {
    SystemModel model;
    CVector one(2);
    one << 0.0, 1.0;
    const auto sol = lindblad_solve(model, DensityMatrix(PureState(one)), {}, 100, 0.01);
    const double p1 = sol.back().mat()(1, 1).real();
    const double err = std::abs(p1 - std::exp(-1.0));
    r.passed = err <= 1e-6;
    r.detail = "population " + fmt("%.12f", p1) + ", error " + fmt("%.3g", err) + " (tol 1e-6)";
  });
}

CheckResult verify_paqs_optimality(const VerifyOptions& opts) {
  return timed(3, "PaQS rotation matches brute-force scan", [&](CheckResult& r) {
    SystemModel model;
    const PureState target = fig_target();
    RngStream state_rng(opts.seed, 0x7061717331ULL);
    const auto initial = sample_initial_states(50, state_rng, InitialKind::kPureHaar);
    const RngStream base(opts.seed, 0x7061717332ULL);
    std::vector<OracleCheckingController> ctrls;
    ctrls.reserve(initial.size());
    for (std::size_t i = 0; i < initial.size(); ++i) ctrls.emplace_back(model, target);
    parallel_for(initial.size(), opts.workers, [&](std::size_t i) {
      simulate(model, initial[i], target, ctrls[i], 100, 0.01, base.substream(i));
    });
    std::size_t checked = 0;
    double theta_err = 0.0, slope = 0.0;
    for (const auto& c : ctrls) {
      checked += c.checked;
      theta_err = std::max(theta_err, c.max_theta_err);
      slope = std::max(slope, c.max_slope);
    }
    r.passed = checked > 0 && theta_err <= 1e-3 && slope <= 1e-4;
    r.detail = std::to_string(checked) + " steps checked, max |theta - scan| " + fmt("%.3g", theta_err) +
               " (tol 1e-3), max |dF/dtheta| " + fmt("%.3g", slope) + " (tol 1e-4)";
  });
}

CheckResult verify_paqs_stabilization(const VerifyOptions& opts) {
  return timed(4, "PaQS stabilizes the target", [&](CheckResult& r) {
    ExperimentPreset p;
    p.name = "paqs_check";
    p.system_target = fig_target();
    p.controller = ControllerKind::kPaqs;
    p.n_trajectories = 200;
    p.n_steps = 100;
    p.dt = 0.01;
    p.seed = opts.seed;
    p.initial.seed = opts.seed + 1;
    const RolloutResult res = rollout(p, opts.workers);
    const double gain = res.mean_final - res.mean_initial;
    r.passed = res.mean_final >= 0.90 && gain >= 0.15;
    r.detail = "mean final F " + fmt("%.4f", res.mean_final) + " +- " + fmt("%.4f", res.stderr_final) +
               " (need >= 0.90), gain over initial " + fmt("%.4f", gain) + " (need >= 0.15)";
  });
}

CheckResult verify_gradients(const VerifyOptions& opts) {
  return timed(5, "gradient checks", [&](CheckResult& r) {
    RngStream rng(opts.seed, 0x67726164ULL);
    std::vector<GradCase> cases;
    const auto run = [&](const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> params,
                         std::size_t max_coords = 0) {
      GradCheckOptions o;
      o.max_coords = max_coords;
      o.seed = opts.seed + cases.size();
      cases.push_back({name, grad_check(f, std::move(params), o)});
    };

    {
      Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({4, 5}, rng), bb = random_tensor({2, 4, 5}, rng);
      run("matmul", [&] { return probe(matmul(a, b), 1); }, {a, b});
      run("matmul_batched", [&] { return probe(matmul(a, bb), 2); }, {a, bb});
      run("transpose", [&] { return probe(transpose(a), 3); }, {a});
      run("reshape", [&] { return probe(reshape(a, {6, 4}), 4); }, {a});
    }
    {
      Tensor a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 3, 4}, rng), c = random_tensor({4}, rng);
      run("add", [&] { return probe(add(a, b), 5); }, {a, b});
      run("add_broadcast", [&] { return probe(add(a, c), 6); }, {a, c});
      run("sub", [&] { return probe(sub(a, b), 7); }, {a, b});
      run("sub_broadcast", [&] { return probe(sub(a, c), 8); }, {a, c});
      run("mul", [&] { return probe(mul(a, b), 9); }, {a, b});
      run("mul_broadcast", [&] { return probe(mul(a, c), 10); }, {a, c});
      run("affine", [&] { return probe(affine(a, -1.7, 0.3), 11); }, {a});
      run("scale", [&] { return probe(scale(a, 2.5), 12); }, {a});
      run("relu", [&] { return probe(relu(a), 13); }, {a});
      run("tanh", [&] { return probe(tanh(a), 14); }, {a});
      run("sigmoid", [&] { return probe(sigmoid(a), 15); }, {a});
      run("sum", [&] { return sum(mul(a, a)); }, {a});
      run("mean", [&] { return mean(tanh(a)); }, {a});
      run("dropout", [&] {
            RngStream d(opts.seed, 0x64726f70ULL);
            return probe(dropout(a, 0.3, d, true), 16);
          },
          {a});
    }
    {
      Tensor x = random_tensor({3, 5}, rng);
      run("softmax", [&] { return probe(softmax(x), 17); }, {x});
      const auto mask = AttentionMask::causal(3, 5, 1).additive();
      run("softmax_masked", [&] { return probe(softmax(add_constant(x, mask, {3, 5})), 18); }, {x});
    }
    {
      Tensor x = random_tensor({3, 6}, rng), g = random_tensor({6}, rng), b = random_tensor({6}, rng);
      run("layer_norm", [&] { return probe(layer_norm(x, g, b), 19); }, {x, g, b});
    }
    {
      Tensor table = random_tensor({5, 4}, rng);
      const std::vector<std::size_t> idx{0, 3, 3, 1, 4, 2};
      run("embedding", [&] { return probe(embedding(table, idx, {2, 3}), 20); }, {table});
    }
    {
      Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 2}, rng), c = random_tensor({1, 3}, rng);
      Tensor d = random_tensor({2, 3, 4}, rng);
      run("concat_last", [&] { return probe(concat({a, b}, -1), 21); }, {a, b});
      run("concat_first", [&] { return probe(concat({a, c}, 0), 22); }, {a, c});
      run("slice", [&] { return probe(slice(d, 1, 1, 2), 23); }, {d});
      run("slice_last", [&] { return probe(slice(d, -1, 1, 3), 24); }, {d});
    }
    {
      Tensor logits = random_tensor({4, 6}, rng);
      const std::vector<std::size_t> t{0, 5, 2, 2};
      run("cross_entropy", [&] { return cross_entropy(logits, t); }, {logits});
    }
    {
      Tensor q = random_tensor({2, 3, 4}, rng), k = random_tensor({2, 5, 4}, rng), v = random_tensor({2, 5, 4}, rng);
      const auto mask = AttentionMask::causal(3, 5, 2);
      run("attention", [&] { return probe(attention(q, k, v, &mask), 25); }, {q, k, v});
    }

    {
      // Full model (every block of the transformer) on a small batch.
      const TransformerConfig cfg = check_transformer_config();
      QuantumTransformer model(cfg, opts.seed + 11);
      RngStream in(opts.seed, 0x7466ULL);
      Batch batch;
      batch.batch_size = 2;
      batch.length = 6;
      for (std::size_t i = 0; i < batch.batch_size * kStateFeatures; ++i) batch.state_features.push_back(in.normal());
      for (std::size_t i = 0; i < batch.batch_size * batch.length; ++i) {
        batch.record.push_back(in.normal());
        batch.targets.push_back(in.uniform_index(cfg.vocab - 1));
      }
      for (std::size_t b = 0; b < batch.batch_size; ++b) {
        batch.decoder_tokens.push_back(cfg.bos());
        for (std::size_t t = 1; t < batch.length; ++t) {
          batch.decoder_tokens.push_back(batch.targets[b * batch.length + t - 1]);
        }
      }
      std::vector<Tensor> params;
      for (const auto& p : model.parameters()) params.push_back(p.tensor);
      run("transformer", [&] { return loss_batch(model, batch); }, params, 60);
    }
    {
      RnnConfig cfg;  // GRU, desk dimensions
      cfg.dropout = 0.0;
      RecurrentModel model(cfg, opts.seed + 12);
      RngStream in(opts.seed, 0x677275ULL);
      Tensor x = random_tensor({3, cfg.embed_dim}, in), h = random_tensor({3, cfg.hidden_dim}, in, 0.5);
      const RnnCellParams& c = model.cell_params();
      std::vector<Tensor> params{x, h};
      for (const Linear* l : {&c.wz, &c.uz, &c.wr, &c.ur, &c.wn, &c.un}) {
        params.push_back(l->w);
        if (l->b.defined()) params.push_back(l->b);
      }
      run("gru_cell", [&] { return probe(model.cell(x, h), 26); }, params, 200);
    }

    double worst = 0.0;
    std::string worst_name;
    for (const auto& c : cases) {
      if (worst_name.empty() || !(c.error <= worst)) {
        worst = c.error;
        worst_name = c.name;
      }
    }
    r.passed = std::all_of(cases.begin(), cases.end(), [](const GradCase& c) { return c.error <= 1e-4; });
    std::ostringstream os;
    os << cases.size() << " cases, worst " << worst_name << " " << fmt("%.3g", worst) << " (tol 1e-4)";
    for (const auto& c : cases) {
      if (!(c.error <= 1e-4)) os << "; failed " << c.name << " " << fmt("%.3g", c.error);
    }
    r.detail = os.str();
  });
}

CheckResult verify_causality(const VerifyOptions& opts) {
  return timed(6, "decoder causality", [&](CheckResult& r) {
    const std::size_t trials = 10, len = 12;
    std::size_t violations = 0;
    for (std::size_t trial = 0; trial < trials; ++trial) {
      RngStream rng(opts.seed, 0x636175736cULL + trial);
      QuantumTransformer model(check_transformer_config(), opts.seed * 31 + trial);
      std::vector<double> feat(kStateFeatures), rec(len);
      std::vector<std::size_t> tok(len);
      for (double& f : feat) f = rng.normal();
      for (double& x : rec) x = rng.normal();
      for (auto& t : tok) t = rng.uniform_index(65);
      const std::size_t kp = 1 + rng.uniform_index(len - 1);

      const auto logits = [&](const std::vector<double>& rv, const std::vector<std::size_t>& tv) {
        NoGradGuard guard;
        const Tensor s = Tensor::from({1, kStateFeatures}, feat);
        const Tensor rt = Tensor::from({1, len, 1}, rv);
        return model.decode(model.encode(s, rt), tv, rt).values();
      };
      const auto base = logits(rec, tok);
      auto rec2 = rec;
      auto tok2 = tok;
      rec2[kp] += 1.0 + rng.normal();
      tok2[kp] = (tok2[kp] + 1 + rng.uniform_index(63)) % 65;
      const auto pert = logits(rec2, tok2);
      const std::size_t n = kp * 65;
      if (std::memcmp(base.data(), pert.data(), n * sizeof(double)) != 0) ++violations;
      // The perturbation must be visible at k' itself, or the test is vacuous.
      if (std::equal(base.begin() + n, base.begin() + n + 65, pert.begin() + n)) ++violations;
    }
    r.passed = violations == 0;
    r.detail = std::to_string(trials) + " random models, " + std::to_string(violations) + " violations";
  });
}

CheckResult verify_attention() {
  return timed(7, "attention examples", [&](CheckResult& r) {
    NoGradGuard guard;
    std::ostringstream os;
    bool ok = true;
    {
      const Tensor q = Tensor::from({2, 3}, {0.3, -2.0, 5.0, 1.0, 7.0, -1.0});
      const Tensor k = Tensor::from({1, 3}, {4.0, -1.5, 0.25});
      const Tensor v = Tensor::from({1, 2}, {0.7, -3.1});
      const auto out = attention(q, k, v, nullptr).values();
      double e = 0.0;
      for (std::size_t i = 0; i < 2; ++i) e = std::max({e, std::abs(out[2 * i] - 0.7), std::abs(out[2 * i + 1] + 3.1)});
      ok = ok && e <= 1e-12;
      os << "singleton " << fmt("%.2g", e);
    }
    {
      const Tensor q = Tensor::from({2, 2}, {1.0, -4.0, 0.5, 2.0});
      const Tensor k = Tensor::from({3, 2}, {0.2, 0.9, 0.2, 0.9, 0.2, 0.9});
      const Tensor v = Tensor::from({3, 2}, {1.0, 2.0, 3.0, -1.0, 5.0, 8.0});
      const auto out = attention(q, k, v, nullptr).values();
      double e = 0.0;
      for (std::size_t i = 0; i < 2; ++i) e = std::max({e, std::abs(out[2 * i] - 3.0), std::abs(out[2 * i + 1] - 3.0)});
      ok = ok && e <= 1e-12;
      os << ", identical keys " << fmt("%.2g", e);
    }
    {
      const Tensor id = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
      const auto out = attention(id, id, id, nullptr).values();
      const double expect[4] = {0.670, 0.330, 0.330, 0.670};
      double e = 0.0;
      for (std::size_t i = 0; i < 4; ++i) e = std::max(e, std::abs(out[i] - expect[i]));
      ok = ok && e <= 1e-3;
      os << ", 2x2 " << fmt("%.2g", e) << " (tol 1e-3, 1e-12 for the exact cases)";
    }
    r.passed = ok;
    r.detail = os.str();
  });
}

std::vector<CheckResult> run_verify_suite(const VerifyOptions& opts, std::ostream* log) {
  std::vector<CheckResult> out;
  const auto add = [&](CheckResult r) {
    if (log != nullptr) *log << format_check(r) << std::endl;
    out.push_back(std::move(r));
  };
  add(verify_sme_lindblad(opts));
  add(verify_decay());
  add(verify_paqs_optimality(opts));
  add(verify_paqs_stabilization(opts));
  add(verify_gradients(opts));
  add(verify_causality(opts));
  add(verify_attention());
  return out;
}

}  // namespace qfc
