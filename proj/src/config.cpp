#include "qfc/config.hpp"

#include "qfc/fileio.hpp"

namespace qfc {

namespace {

DensityMatrix density_from_json(const Json& j, const std::string& where) {
  require_keys(j, {"re", "im"}, where);
  if (!j.contains("re") || !j["re"].is_array()) throw ConfigError(where + ".re: expected an array");
  const auto re = j["re"].get<std::vector<double>>();
  std::vector<double> im(re.size(), 0.0);
  if (j.contains("im")) im = j["im"].get<std::vector<double>>();
  if (re.size() != 4 || im.size() != 4) throw ConfigError(where + ": expected 4 row-major entries");
  CMatrix m(2, 2);
  for (int i = 0; i < 4; ++i) m(i / 2, i % 2) = Complex(re[i], im[i]);
  try {
    return DensityMatrix(m);
  } catch (const std::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

InitialStates initial_from_json(const Json& j, const std::string& where, std::uint64_t seed) {
  require_keys(j, {"kind", "seed", "state", "rho"}, where);
  InitialStates s;
  s.seed = seed;
  if (j.contains("kind")) s.kind = json_string(j, "kind", where);
  if (j.contains("seed")) s.seed = json_count(j, "seed", where);
  if (s.kind == "fixed") {
    if (j.contains("state") == j.contains("rho")) throw ConfigError(where + ": fixed needs exactly one of state, rho");
    s.state = j.contains("state") ? DensityMatrix(pure_state_from_json(j["state"], where + ".state"))
                                  : density_from_json(j["rho"], where + ".rho");
  } else if (s.kind != "pure_haar" && s.kind != "mixed_random") {
    throw ConfigError(where + ".kind: unknown initial kind '" + s.kind + "'");
  } else if (j.contains("state") || j.contains("rho")) {
    throw ConfigError(where + ": state/rho only apply to kind 'fixed'");
  }
  return s;
}

ExperimentPreset preset_from_json(const Json& j, const RunConfig& rc, const PureState& target, std::size_t index) {
  const std::string where = "eval.presets[" + std::to_string(index) + "]";
  require_keys(j, {"name", "controller", "checkpoint", "n_trajectories", "n_steps", "dt", "eta", "epsilon", "initial",
                   "target", "seed"},
               where);
  ExperimentPreset p;
  p.name = j.contains("name") ? json_string(j, "name", where) : "preset" + std::to_string(index);
  p.model = rc.system;
  p.grid = rc.grid;
  p.system_target = target;
  p.seed = rc.seed;
  p.initial.seed = rc.seed;
  p.dt = rc.dataset.dt;
  p.n_steps = rc.dataset.n_steps;
  try {
    p.controller = controller_kind_from_string(json_string(j, "controller", where));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ".controller: " + e.what());
  }
  if (j.contains("checkpoint")) {
    p.checkpoint = json_string(j, "checkpoint", where);
  } else if (is_learned(p.controller)) {
    p.checkpoint = rc.checkpoint_dir(to_string(p.controller)).string();
  }
  if (j.contains("n_trajectories")) p.n_trajectories = json_count(j, "n_trajectories", where);
  if (j.contains("n_steps")) p.n_steps = json_count(j, "n_steps", where);
  if (j.contains("dt")) p.dt = json_number(j, "dt", where);
  if (j.contains("eta")) p.model.eta = json_number(j, "eta", where);
  if (j.contains("epsilon")) p.model.epsilon = json_number(j, "epsilon", where);
  if (j.contains("seed")) p.seed = json_count(j, "seed", where);
  if (j.contains("initial")) p.initial = initial_from_json(j["initial"], where + ".initial", p.seed);
  if (j.contains("target")) p.system_target = pure_state_from_json(j["target"], where + ".target");
  try {
    p.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return p;
}

RnnConfig recurrent_section(const Json& j, const char* key, CellKind cell, std::size_t vocab) {
  RnnConfig c;
  c.cell = cell;
  c.vocab = vocab;
  if (j.contains(key)) {
    Json sub = j[key];
    if (!sub.is_object()) throw ConfigError(std::string("train.") + key + ": expected an object");
    if (sub.contains("cell") && sub["cell"] != to_string(cell)) {
      throw ConfigError(std::string("train.") + key + ".cell: must be '" + to_string(cell) + "'");
    }
    sub["cell"] = to_string(cell);
    if (!sub.contains("vocab")) sub["vocab"] = vocab;
    c = rnn_config_from_json(sub, std::string("train.") + key);
  }
  if (c.vocab != vocab) throw ConfigError(std::string("train.") + key + ".vocab must equal grid.n_bins + 1");
  return c;
}

}  // namespace

RunConfig parse_run_config(const Json& j, std::optional<std::uint64_t> seed_override,
                           std::optional<std::filesystem::path> out_override) {
  require_keys(j, {"name", "seed", "system", "grid", "dataset", "train", "eval", "paths"}, "config");
  RunConfig rc;
  if (j.contains("name")) rc.name = json_string(j, "name", "config");
  if (j.contains("seed")) rc.seed = json_count(j, "seed", "config");
  if (seed_override) rc.seed = *seed_override;
  rc.system = j.contains("system") ? system_model_from_json(j["system"]) : SystemModel{};
  rc.grid = j.contains("grid") ? control_grid_from_json(j["grid"]) : ControlGrid{};
  rc.out = "runs/" + rc.name;

  if (j.contains("paths")) {
    const Json& p = j["paths"];
    require_keys(p, {"out", "init_checkpoint"}, "paths");
    if (p.contains("out")) rc.out = json_string(p, "out", "paths");
    if (p.contains("init_checkpoint")) rc.init_checkpoint = json_string(p, "init_checkpoint", "paths");
  }
  if (out_override) rc.out = *out_override;

  // dataset
  DatasetManifest& d = rc.dataset;
  d.model = rc.system;
  d.grid = rc.grid;
  d.master_seed = rc.seed;
  d.system_target = PureState::normalized((CVector(2) << Complex(1, 0), Complex(0, 1)).finished());
  if (j.contains("dataset")) {
    const Json& s = j["dataset"];
    const std::string w = "dataset";
    require_keys(s, {"n_initial_states", "n_traj_per_state", "n_steps", "dt", "system_target", "initial_kind", "split"},
                 w);
    if (s.contains("n_initial_states")) d.n_initial_states = json_count(s, "n_initial_states", w);
    if (s.contains("n_traj_per_state")) d.n_traj_per_state = json_count(s, "n_traj_per_state", w);
    if (s.contains("n_steps")) d.n_steps = json_count(s, "n_steps", w);
    if (s.contains("dt")) d.dt = json_number(s, "dt", w);
    if (s.contains("system_target")) d.system_target = pure_state_from_json(s["system_target"], w + ".system_target");
    if (s.contains("initial_kind")) {
      try {
        d.initial_kind = initial_kind_from_string(json_string(s, "initial_kind", w));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(w + ".initial_kind: " + e.what());
      }
    }
    if (s.contains("split")) {
      const Json& f = s["split"];
      require_keys(f, {"train", "val", "test"}, w + ".split");
      d.train_fraction = json_number(f, "train", w + ".split");
      d.val_fraction = json_number(f, "val", w + ".split");
      d.test_fraction = json_number(f, "test", w + ".split");
    }
  }
  try {
    d.validate();
  } catch (const DatasetError& e) {
    throw ConfigError(std::string("dataset: ") + e.what());
  }

  // train
  const std::size_t vocab = rc.grid.n_bins + 1;
  rc.transformer.vocab = vocab;
  rc.rnn = recurrent_section(Json::object(), "rnn", CellKind::kVanilla, vocab);
  rc.gru = recurrent_section(Json::object(), "gru", CellKind::kGru, vocab);
  rc.train.seed = rc.seed;
  if (j.contains("train")) {
    Json t = j["train"];
    if (!t.is_object()) throw ConfigError("train: expected an object");
    if (t.contains("models")) {
      if (!t["models"].is_array()) throw ConfigError("train.models: expected an array");
      rc.train_models.clear();
      for (const Json& m : t["models"]) {
        if (!m.is_string()) throw ConfigError("train.models: expected strings");
        const std::string k = m.get<std::string>();
        if (k != "transformer" && k != "rnn" && k != "gru") throw ConfigError("train.models: unknown model '" + k + "'");
        rc.train_models.push_back(k);
      }
    }
    if (t.contains("transformer")) {
      Json tc = t["transformer"];
      if (tc.is_object() && !tc.contains("vocab")) tc["vocab"] = vocab;
      rc.transformer = transformer_config_from_json(tc, "train.transformer");
      if (rc.transformer.vocab != vocab) throw ConfigError("train.transformer.vocab must equal grid.n_bins + 1");
    }
    rc.rnn = recurrent_section(t, "rnn", CellKind::kVanilla, vocab);
    rc.gru = recurrent_section(t, "gru", CellKind::kGru, vocab);
    for (const char* k : {"models", "transformer", "rnn", "gru"}) t.erase(k);
    if (!t.contains("seed")) t["seed"] = rc.seed;
    if (seed_override) t["seed"] = *seed_override;
    rc.train = train_config_from_json(t, "train");
  }
  if (!rc.init_checkpoint.empty()) rc.train.init_checkpoint = rc.init_checkpoint.string();

  // eval
  if (j.contains("eval")) {
    const Json& e = j["eval"];
    require_keys(e, {"presets", "bench"}, "eval");
    if (e.contains("presets")) {
      if (!e["presets"].is_array()) throw ConfigError("eval.presets: expected an array");
      std::size_t i = 0;
      for (const Json& p : e["presets"]) rc.presets.push_back(preset_from_json(p, rc, d.system_target, i++));
    }
    if (e.contains("bench")) {
      const Json& b = e["bench"];
      require_keys(b, {"repetitions", "n_steps"}, "eval.bench");
      if (b.contains("repetitions")) rc.bench.repetitions = json_count(b, "repetitions", "eval.bench");
      if (b.contains("n_steps")) rc.bench.n_steps = json_count(b, "n_steps", "eval.bench");
      if (rc.bench.repetitions < 20) throw ConfigError("eval.bench.repetitions: need at least 20");
    }
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override,
                          std::optional<std::filesystem::path> out_override) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    return parse_run_config(j, seed_override, out_override);
  } catch (const Json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
}

}  // namespace qfc
