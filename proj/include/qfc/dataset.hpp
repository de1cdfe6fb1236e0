// dataset.hpp: supervised (initial state, record, PaQS label) datasets.
//
// Layout: <dir>/manifest.json plus train.jsonl, val.jsonl and test.jsonl with
// one SampleRecord per line. Floats are written with 17 significant digits so
// a reload is bit-exact.

#pragma once

#include "qfc/complexmat.hpp"
#include "qfc/physmodel.hpp"
#include "qfc/rng.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace qfc {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class InitialKind { kPureHaar, kMixedRandom };
std::string to_string(InitialKind kind);
InitialKind initial_kind_from_string(const std::string& s);

// Qubit states. Mixed states are p P1 + (1 - p) P2 for Haar projectors P1, P2
// and p uniform on [0, 1].
std::vector<DensityMatrix> sample_initial_states(std::size_t n, RngStream& rng, InitialKind kind);

enum class Split { kTrain, kVal, kTest };
std::string to_string(Split split);
Split split_from_string(const std::string& s);

struct DatasetSummary {
  std::size_t n_records = 0;
  std::size_t n_rejected = 0;
  std::vector<std::size_t> token_histogram;
  double clamped_fraction = 0.0;  // labels outside [lambda_min, lambda_max]
  double mean_initial_fidelity = 0.0;
  double mean_final_fidelity = 0.0;
  bool in_range_ok() const { return 1.0 - clamped_fraction >= 0.98; }
};

struct DatasetManifest {
  int schema_version = 1;
  SystemModel model;
  ControlGrid grid;
  std::size_t n_initial_states = 20;
  std::size_t n_traj_per_state = 50;
  std::size_t n_steps = 100;
  double dt = 0.01;
  std::uint64_t master_seed = 0;
  PureState system_target;
  InitialKind initial_kind = InitialKind::kPureHaar;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  std::string created;  // ISO-8601 UTC, filled in by generate_dataset

  // Filled in by generation.
  double record_mean = 0.0;
  double record_std = 1.0;
  std::vector<std::size_t> train_states, val_states, test_states;
  DatasetSummary summary;

  // Throws DatasetError.
  void validate() const;
  PureState full_target() const { return target_state(model, system_target); }
};

struct SampleRecord {
  std::size_t traj_id = 0;
  std::size_t state_id = 0;
  std::vector<double> rho0_re, rho0_im;  // row-major, full Hilbert space
  std::vector<double> dr, dW, lambda_opt;
  std::vector<std::size_t> lambda_token;
  std::vector<double> fidelity;  // n_steps + 1

  DensityMatrix rho0() const;
};

std::string to_jsonl_line(const SampleRecord& rec);
SampleRecord sample_from_json_line(const std::string& line);

std::string manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const std::string& text);

// Partitions state ids 0..n-1 by a seeded shuffle.
void assign_splits(DatasetManifest& m);

// Generates with the privileged locally optimal PaQS teacher, writes all four
// files and returns the manifest as written. Aborts with DatasetError if more
// than 1% of trajectories are rejected.
DatasetManifest generate_dataset(const DatasetManifest& spec, const std::filesystem::path& dir,
                                 std::size_t workers = 1);

DatasetManifest load_manifest(const std::filesystem::path& dir);
std::vector<SampleRecord> load_split(const std::filesystem::path& dir, Split split);

// Smallest stride s with ceil(n / s) <= context_len - 1.
std::size_t record_stride(std::size_t n_steps, std::size_t context_len);

inline constexpr std::size_t kStateFeatures = 8;

// Reduced qubit density matrix as (re, im) pairs, row-major.
std::array<double, kStateFeatures> state_features(const SystemModel& model, const DensityMatrix& rho);

// One model-ready sequence. Record values are standardized with the manifest
// statistics; with stride s each position carries the window sum of dr,
// standardized as (sum - w mean) / (sqrt(w) std), and the label of the
// window's last step.
struct PreparedSequence {
  std::array<double, kStateFeatures> features{};
  std::vector<double> record;
  std::vector<std::size_t> targets;
  std::size_t traj_id = 0;
};

PreparedSequence prepare_sequence(const SampleRecord& rec, const DatasetManifest& m,
                                  std::size_t context_len);

// Decoder inputs are the targets shifted right by one with BOS at position 0.
struct Batch {
  std::size_t batch_size = 0;
  std::size_t length = 0;
  std::vector<double> state_features;      // B x 8
  std::vector<double> record;              // B x L x 1
  std::vector<std::size_t> decoder_tokens; // B x L
  std::vector<std::size_t> targets;        // B x L
  std::vector<std::size_t> traj_ids;
};

// Groups sequences (all of equal length) into batches. With a shuffle stream
// the order is permuted first; the last batch may be smaller.
std::vector<Batch> make_batches(const std::vector<PreparedSequence>& seqs, std::size_t batch_size,
                                std::size_t bos_token, RngStream* shuffle);

std::vector<Batch> load_batches(const std::filesystem::path& dir, Split split, std::size_t batch_size,
                                std::size_t context_len, RngStream* shuffle);

}  // namespace qfc
