#include "qfc/dataset.hpp"

#include "qfc/fileio.hpp"
#include "qfc/paqs.hpp"
#include "qfc/serialize.hpp"
#include "qfc/sme.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace qfc {

namespace {

constexpr std::uint64_t kStatesStream = 1;
constexpr std::uint64_t kSplitStream = 2;
constexpr std::uint64_t kTrajStream = 3;

PureState haar_qubit(RngStream& rng) {
  CVector v(2);
  for (int i = 0; i < 2; ++i) {
    const double re = rng.normal();
    const double im = rng.normal();
    v(i) = Complex(re, im);
  }
  return PureState::normalized(v);
}

template <typename T>
void append_array(std::string& out, const std::vector<T>& xs) {
  out += '[';
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ',';
    if constexpr (std::is_floating_point_v<T>) {
      out += format_double(xs[i]);
    } else {
      out += std::to_string(xs[i]);
    }
  }
  out += ']';
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::filesystem::path split_path(const std::filesystem::path& dir, Split split) {
  return dir / (to_string(split) + ".jsonl");
}

std::vector<double> doubles(const Json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_array()) throw DatasetError(where + ": missing array '" + key + "'");
  std::vector<double> out;
  out.reserve(it->size());
  for (const auto& x : *it) {
    if (!x.is_number()) throw DatasetError(where + ": non-numeric entry in '" + key + "'");
    out.push_back(x.get<double>());
  }
  return out;
}

std::vector<std::size_t> counts(const Json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_array()) throw DatasetError(where + ": missing array '" + key + "'");
  std::vector<std::size_t> out;
  out.reserve(it->size());
  for (const auto& x : *it) {
    if (!x.is_number_unsigned()) throw DatasetError(where + ": bad integer in '" + key + "'");
    out.push_back(x.get<std::size_t>());
  }
  return out;
}

}  // namespace

std::string to_string(InitialKind kind) {
  return kind == InitialKind::kPureHaar ? "pure_haar" : "mixed_random";
}

InitialKind initial_kind_from_string(const std::string& s) {
  if (s == "pure_haar") return InitialKind::kPureHaar;
  if (s == "mixed_random") return InitialKind::kMixedRandom;
  throw std::invalid_argument("unknown initial state kind '" + s + "'");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<DensityMatrix> sample_initial_states(std::size_t n, RngStream& rng, InitialKind kind) {
  if (n == 0) throw std::invalid_argument("sample_initial_states: n must be >= 1");
  std::vector<DensityMatrix> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const PureState a = haar_qubit(rng);
    if (kind == InitialKind::kPureHaar) {
      out.emplace_back(a);
      continue;
    }
    const PureState b = haar_qubit(rng);
    const double p = rng.uniform();
    out.push_back(DensityMatrix::from_unnormalized(p * a.projector() + (1.0 - p) * b.projector()));
  }
  return out;
}

void DatasetManifest::validate() const {
  try {
    model.validate();
    grid.validate();
  } catch (const std::invalid_argument& e) {
    throw DatasetError(std::string("manifest: ") + e.what());
  }
  if (n_initial_states == 0 || n_traj_per_state == 0) {
    throw DatasetError("manifest: state and trajectory counts must be positive");
  }
  if (!(dt > 0.0) || dt * model.kappa > 0.05) throw DatasetError("manifest: need 0 < dt * kappa <= 0.05");
  if (system_target.dim() != 2) throw DatasetError("manifest: system target must be a qubit state");
  const double fsum = train_fraction + val_fraction + test_fraction;
  if (std::abs(fsum - 1.0) > 1e-9 || train_fraction < 0 || val_fraction < 0 || test_fraction < 0) {
    throw DatasetError("manifest: split fractions must be non-negative and sum to 1");
  }
  if (!(record_std > 0.0)) throw DatasetError("manifest: record_std must be positive");
}

DensityMatrix SampleRecord::rho0() const {
  const auto n = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(rho0_re.size()))));
  if (n * n != static_cast<Eigen::Index>(rho0_re.size()) || rho0_im.size() != rho0_re.size()) {
    throw DatasetError("sample: rho0 arrays are not a square matrix");
  }
  CMatrix m(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) {
      m(r, c) = Complex(rho0_re[r * n + c], rho0_im[r * n + c]);
    }
  }
  return DensityMatrix(m);
}

std::string to_jsonl_line(const SampleRecord& rec) {
  std::string out;
  out.reserve(64 + 24 * 4 * rec.dr.size());
  out += "{\"traj_id\":" + std::to_string(rec.traj_id);
  out += ",\"state_id\":" + std::to_string(rec.state_id);
  out += ",\"rho0_re\":";
  append_array(out, rec.rho0_re);
  out += ",\"rho0_im\":";
  append_array(out, rec.rho0_im);
  out += ",\"dr\":";
  append_array(out, rec.dr);
  out += ",\"dW\":";
  append_array(out, rec.dW);
  out += ",\"lambda_opt\":";
  append_array(out, rec.lambda_opt);
  out += ",\"lambda_token\":";
  append_array(out, rec.lambda_token);
  out += ",\"fidelity\":";
  append_array(out, rec.fidelity);
  out += "}";
  return out;
}

SampleRecord sample_from_json_line(const std::string& line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw DatasetError(std::string("sample: malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw DatasetError("sample: expected an object");
  const std::string where = "sample";
  SampleRecord rec;
  if (!j.contains("traj_id") || !j["traj_id"].is_number_unsigned() || !j.contains("state_id") ||
      !j["state_id"].is_number_unsigned()) {
    throw DatasetError("sample: missing traj_id/state_id");
  }
  rec.traj_id = j["traj_id"].get<std::size_t>();
  rec.state_id = j["state_id"].get<std::size_t>();
  rec.rho0_re = doubles(j, "rho0_re", where);
  rec.rho0_im = doubles(j, "rho0_im", where);
  rec.dr = doubles(j, "dr", where);
  rec.dW = doubles(j, "dW", where);
  rec.lambda_opt = doubles(j, "lambda_opt", where);
  rec.lambda_token = counts(j, "lambda_token", where);
  rec.fidelity = doubles(j, "fidelity", where);
  const std::size_t n = rec.dr.size();
  if (rec.dW.size() != n || rec.lambda_opt.size() != n || rec.lambda_token.size() != n ||
      rec.fidelity.size() != n + 1) {
    throw DatasetError("sample " + std::to_string(rec.traj_id) + ": array lengths disagree");
  }
  return rec;
}

std::string manifest_to_json(const DatasetManifest& m) {
  Json j;
  j["schema_version"] = m.schema_version;
  j["model"] = to_json(m.model);
  j["grid"] = to_json(m.grid);
  j["n_initial_states"] = m.n_initial_states;
  j["n_traj_per_state"] = m.n_traj_per_state;
  j["n_steps"] = m.n_steps;
  j["dt"] = m.dt;
  j["master_seed"] = m.master_seed;
  j["system_target"] = to_json(m.system_target);
  j["initial_kind"] = to_string(m.initial_kind);
  j["split_fractions"] = {{"train", m.train_fraction}, {"val", m.val_fraction}, {"test", m.test_fraction}};
  j["created"] = m.created;
  j["record_mean"] = m.record_mean;
  j["record_std"] = m.record_std;
  j["train_states"] = m.train_states;
  j["val_states"] = m.val_states;
  j["test_states"] = m.test_states;
  j["summary"] = {{"n_records", m.summary.n_records},
                  {"n_rejected", m.summary.n_rejected},
                  {"token_histogram", m.summary.token_histogram},
                  {"clamped_fraction", m.summary.clamped_fraction},
                  {"mean_initial_fidelity", m.summary.mean_initial_fidelity},
                  {"mean_final_fidelity", m.summary.mean_final_fidelity}};
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text) {
  DatasetManifest m;
  try {
    const Json j = Json::parse(text);
    const std::string w = "manifest";
    require_keys(j, {"schema_version", "model", "grid", "n_initial_states", "n_traj_per_state", "n_steps",
                     "dt", "master_seed", "system_target", "initial_kind", "split_fractions", "created",
                     "record_mean", "record_std", "train_states", "val_states", "test_states", "summary"},
                 w);
    m.schema_version = static_cast<int>(json_count(j, "schema_version", w));
    if (m.schema_version != 1) throw DatasetError("manifest: unsupported schema_version");
    m.model = system_model_from_json(j.at("model"), "manifest.model");
    m.grid = control_grid_from_json(j.at("grid"), "manifest.grid");
    m.n_initial_states = json_count(j, "n_initial_states", w);
    m.n_traj_per_state = json_count(j, "n_traj_per_state", w);
    m.n_steps = json_count(j, "n_steps", w);
    m.dt = json_number(j, "dt", w);
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    m.system_target = pure_state_from_json(j.at("system_target"), "manifest.system_target");
    m.initial_kind = initial_kind_from_string(json_string(j, "initial_kind", w));
    const Json& f = j.at("split_fractions");
    m.train_fraction = json_number(f, "train", w);
    m.val_fraction = json_number(f, "val", w);
    m.test_fraction = json_number(f, "test", w);
    m.created = j.value("created", "");
    m.record_mean = json_number(j, "record_mean", w);
    m.record_std = json_number(j, "record_std", w);
    m.train_states = counts(j, "train_states", w);
    m.val_states = counts(j, "val_states", w);
    m.test_states = counts(j, "test_states", w);
    if (j.contains("summary")) {
      const Json& s = j["summary"];
      m.summary.n_records = json_count(s, "n_records", w);
      m.summary.n_rejected = json_count(s, "n_rejected", w);
      m.summary.token_histogram = counts(s, "token_histogram", w);
      m.summary.clamped_fraction = json_number(s, "clamped_fraction", w);
      m.summary.mean_initial_fidelity = json_number(s, "mean_initial_fidelity", w);
      m.summary.mean_final_fidelity = json_number(s, "mean_final_fidelity", w);
    }
  } catch (const Json::exception& e) {
    throw DatasetError(std::string("manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw DatasetError(e.what());
  } catch (const std::invalid_argument& e) {
    throw DatasetError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

void assign_splits(DatasetManifest& m) {
  const std::size_t n = m.n_initial_states;
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  RngStream rng(m.master_seed, kSplitStream);
  for (std::size_t i = n; i > 1; --i) {
    std::swap(ids[i - 1], ids[rng.uniform_index(i)]);
  }
  const auto round_count = [n](double f) {
    return static_cast<std::size_t>(std::floor(f * static_cast<double>(n) + 0.5));
  };
  const std::size_t n_train = std::min(n, round_count(m.train_fraction));
  const std::size_t n_val = std::min(n - n_train, round_count(m.val_fraction));
  m.train_states.assign(ids.begin(), ids.begin() + n_train);
  m.val_states.assign(ids.begin() + n_train, ids.begin() + n_train + n_val);
  m.test_states.assign(ids.begin() + n_train + n_val, ids.end());
  std::sort(m.train_states.begin(), m.train_states.end());
  std::sort(m.val_states.begin(), m.val_states.end());
  std::sort(m.test_states.begin(), m.test_states.end());
}

DatasetManifest generate_dataset(const DatasetManifest& spec, const std::filesystem::path& dir,
                                 std::size_t workers) {
  DatasetManifest m = spec;
  m.record_mean = 0.0;
  m.record_std = 1.0;
  m.validate();
  assign_splits(m);
  if (m.created.empty()) m.created = utc_now();

  RngStream state_rng(m.master_seed, kStatesStream);
  const std::vector<DensityMatrix> qubit_states =
      sample_initial_states(m.n_initial_states, state_rng, m.initial_kind);
  const PureState target = m.full_target();
  const std::size_t n_traj = m.n_initial_states * m.n_traj_per_state;
  const RngStream traj_root(m.master_seed, kTrajStream);

  std::vector<SampleRecord> records(n_traj);
  std::vector<char> rejected(n_traj, 0);
  std::vector<std::string> failures(n_traj);
  std::atomic<std::size_t> next{0};

  const auto run = [&]() {
    PaqsController teacher(m.model, target, PaqsRule::kLocallyOptimal, PaqsFilter::kTrueState);
    for (std::size_t id = next++; id < n_traj; id = next++) {
      const std::size_t state_id = id / m.n_traj_per_state;
      const DensityMatrix rho0 = lift_initial_state(m.model, qubit_states[state_id]);
      SampleRecord& rec = records[id];
      rec.traj_id = id;
      rec.state_id = state_id;
      try {
        Trajectory tr = simulate(m.model, rho0, target, teacher, m.n_steps, m.dt, traj_root.substream(id));
        rec.dr = std::move(tr.dr);
        rec.dW = std::move(tr.dW);
        rec.lambda_opt = std::move(tr.lambda);
        rec.fidelity = std::move(tr.fidelity);
      } catch (const TrajectoryRejected& e) {
        rejected[id] = 1;
        failures[id] = e.what();
        continue;
      }
      rec.lambda_token.reserve(rec.lambda_opt.size());
      for (double l : rec.lambda_opt) rec.lambda_token.push_back(tokenize_lambda(m.grid, l));
      const CMatrix& r = rho0.mat();
      for (Eigen::Index a = 0; a < r.rows(); ++a) {
        for (Eigen::Index b = 0; b < r.cols(); ++b) {
          rec.rho0_re.push_back(r(a, b).real());
          rec.rho0_im.push_back(r(a, b).imag());
        }
      }
    }
  };

  const std::size_t lanes = std::max<std::size_t>(1, std::min(workers, n_traj));
  if (lanes == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < lanes; ++i) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }

  DatasetSummary& s = m.summary;
  s = DatasetSummary{};
  s.token_histogram.assign(m.grid.n_bins, 0);
  std::string first_failure;
  for (std::size_t i = 0; i < n_traj; ++i) {
    if (rejected[i]) {
      if (first_failure.empty()) first_failure = "trajectory " + std::to_string(i) + ": " + failures[i];
      ++s.n_rejected;
    }
  }
  if (static_cast<double>(s.n_rejected) > 0.01 * static_cast<double>(n_traj)) {
    throw DatasetError("generate_dataset: " + std::to_string(s.n_rejected) + " of " + std::to_string(n_traj) +
                       " trajectories rejected; first: " + first_failure);
  }

  std::vector<Split> split_of(m.n_initial_states, Split::kTest);
  for (std::size_t id : m.train_states) split_of[id] = Split::kTrain;
  for (std::size_t id : m.val_states) split_of[id] = Split::kVal;

  std::size_t n_labels = 0, n_clamped = 0;
  double sum_fi = 0.0, sum_ff = 0.0;
  double rec_sum = 0.0, rec_sq = 0.0;
  std::size_t rec_n = 0;
  std::string text[3];
  for (std::size_t i = 0; i < n_traj; ++i) {
    if (rejected[i]) continue;
    const SampleRecord& rec = records[i];
    ++s.n_records;
    sum_fi += rec.fidelity.front();
    sum_ff += rec.fidelity.back();
    for (std::size_t k = 0; k < rec.lambda_opt.size(); ++k) {
      ++n_labels;
      ++s.token_histogram[rec.lambda_token[k]];
      if (rec.lambda_opt[k] < m.grid.lambda_min || rec.lambda_opt[k] > m.grid.lambda_max) ++n_clamped;
    }
    const Split sp = split_of[rec.state_id];
    if (sp == Split::kTrain) {
      for (double x : rec.dr) {
        rec_sum += x;
        rec_sq += x * x;
        ++rec_n;
      }
    }
    std::string& out = text[static_cast<int>(sp)];
    out += to_jsonl_line(rec);
    out += '\n';
  }
  if (s.n_records > 0) {
    s.mean_initial_fidelity = sum_fi / static_cast<double>(s.n_records);
    s.mean_final_fidelity = sum_ff / static_cast<double>(s.n_records);
  }
  s.clamped_fraction = n_labels ? static_cast<double>(n_clamped) / static_cast<double>(n_labels) : 0.0;
  if (rec_n > 1) {
    const double mean = rec_sum / static_cast<double>(rec_n);
    const double var = rec_sq / static_cast<double>(rec_n) - mean * mean;
    m.record_mean = mean;
    if (var > 0.0) m.record_std = std::sqrt(var);
  }

  for (Split sp : {Split::kTrain, Split::kVal, Split::kTest}) {
    atomic_write(split_path(dir, sp), text[static_cast<int>(sp)]);
  }
  atomic_write(dir / "manifest.json", manifest_to_json(m));
  return m;
}

DatasetManifest load_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  if (!std::filesystem::exists(path)) throw DatasetError("dataset manifest not found: " + path.string());
  return manifest_from_json(read_text(path));
}

std::vector<SampleRecord> load_split(const std::filesystem::path& dir, Split split) {
  const auto path = split_path(dir, split);
  std::ifstream in(path);
  if (!in) throw DatasetError("dataset split not found: " + path.string());
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(sample_from_json_line(line));
    } catch (const DatasetError& e) {
      throw DatasetError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::size_t record_stride(std::size_t n_steps, std::size_t context_len) {
  if (context_len < 2) throw std::invalid_argument("record_stride: context_len must be >= 2");
  const std::size_t cap = context_len - 1;
  if (n_steps <= cap) return 1;
  return (n_steps + cap - 1) / cap;
}

std::array<double, kStateFeatures> state_features(const SystemModel& model, const DensityMatrix& rho) {
  const CMatrix q = reduced_qubit_state(model, rho);
  std::array<double, kStateFeatures> f{};
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 2; ++c) {
      f[2 * (2 * r + c)] = q(r, c).real();
      f[2 * (2 * r + c) + 1] = q(r, c).imag();
    }
  }
  return f;
}

PreparedSequence prepare_sequence(const SampleRecord& rec, const DatasetManifest& m, std::size_t context_len) {
  const std::size_t n = rec.dr.size();
  if (rec.lambda_token.size() != n) throw DatasetError("prepare_sequence: record and label lengths differ");
  PreparedSequence seq;
  seq.traj_id = rec.traj_id;
  seq.features = state_features(m.model, rec.rho0());
  const std::size_t s = record_stride(n, context_len);
  for (std::size_t start = 0; start < n; start += s) {
    const std::size_t end = std::min(n, start + s);
    const double w = static_cast<double>(end - start);
    double sum = 0.0;
    for (std::size_t k = start; k < end; ++k) sum += rec.dr[k];
    seq.record.push_back((sum - w * m.record_mean) / (std::sqrt(w) * m.record_std));
    const std::size_t tok = rec.lambda_token[end - 1];
    if (tok >= m.grid.n_bins) throw DatasetError("prepare_sequence: token outside the grid");
    seq.targets.push_back(tok);
  }
  return seq;
}

std::vector<Batch> make_batches(const std::vector<PreparedSequence>& seqs, std::size_t batch_size,
                                std::size_t bos_token, RngStream* shuffle) {
  if (batch_size == 0) throw std::invalid_argument("make_batches: batch_size must be >= 1");
  std::vector<std::size_t> order(seqs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle != nullptr) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle->uniform_index(i)]);
  }
  std::vector<Batch> out;
  for (std::size_t b0 = 0; b0 < order.size(); b0 += batch_size) {
    Batch batch;
    batch.batch_size = std::min(batch_size, order.size() - b0);
    batch.length = seqs[order[b0]].record.size();
    for (std::size_t i = 0; i < batch.batch_size; ++i) {
      const PreparedSequence& s = seqs[order[b0 + i]];
      if (s.record.size() != batch.length) throw DatasetError("make_batches: sequences differ in length");
      batch.state_features.insert(batch.state_features.end(), s.features.begin(), s.features.end());
      batch.record.insert(batch.record.end(), s.record.begin(), s.record.end());
      for (std::size_t k = 0; k < batch.length; ++k) {
        batch.decoder_tokens.push_back(k == 0 ? bos_token : s.targets[k - 1]);
      }
      batch.targets.insert(batch.targets.end(), s.targets.begin(), s.targets.end());
      batch.traj_ids.push_back(s.traj_id);
    }
    out.push_back(std::move(batch));
  }
  return out;
}

std::vector<Batch> load_batches(const std::filesystem::path& dir, Split split, std::size_t batch_size,
                                std::size_t context_len, RngStream* shuffle) {
  const DatasetManifest m = load_manifest(dir);
  std::vector<PreparedSequence> seqs;
  for (const SampleRecord& rec : load_split(dir, split)) seqs.push_back(prepare_sequence(rec, m, context_len));
  return make_batches(seqs, batch_size, m.grid.n_bins, shuffle);
}

}  // namespace qfc
