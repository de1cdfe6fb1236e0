#include "qfc/dataset.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>

using namespace qfc;
using qfc::testing::ScratchDir;
using qfc::testing::slurp;

namespace {

PureState target_plus_i() {
  CVector v(2);
  v << 1.0, Complex(0.0, 1.0);
  return PureState::normalized(v);
}

DatasetManifest small_manifest(std::size_t states = 10, std::size_t per_state = 3, std::size_t steps = 20) {
  DatasetManifest m;
  m.n_initial_states = states;
  m.n_traj_per_state = per_state;
  m.n_steps = steps;
  m.master_seed = 42;
  m.system_target = target_plus_i();
  m.created = "2026-01-01T00:00:00Z";
  return m;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

}  // namespace

TEST(InitialStates, ValidAndReproducible) {
  for (InitialKind kind : {InitialKind::kPureHaar, InitialKind::kMixedRandom}) {
    RngStream a(5), b(5);
    const auto sa = sample_initial_states(50, a, kind);
    const auto sb = sample_initial_states(50, b, kind);
    ASSERT_EQ(sa.size(), 50u);
    for (std::size_t i = 0; i < sa.size(); ++i) {
      EXPECT_TRUE(sa[i].mat() == sb[i].mat());
      EXPECT_NO_THROW(DensityMatrix{sa[i].mat()});
      if (kind == InitialKind::kPureHaar) EXPECT_NEAR(sa[i].purity(), 1.0, 1e-12);
    }
  }
}

TEST(InitialStates, HaarBlochMeanSmall) {
  RngStream rng(8);
  const auto states = sample_initial_states(200, rng, InitialKind::kPureHaar);
  double x = 0, y = 0, z = 0;
  for (const auto& s : states) {
    x += expect(sigma_x(), s).real();
    y += expect(sigma_y(), s).real();
    z += expect(sigma_z(), s).real();
  }
  EXPECT_LE(std::sqrt(x * x + y * y + z * z) / 200.0, 0.25);
}

TEST(Manifest, ValidationAndRoundTrip) {
  DatasetManifest m = small_manifest();
  EXPECT_NO_THROW(m.validate());
  m.train_fraction = 0.7;
  EXPECT_THROW(m.validate(), DatasetError);
  m = small_manifest();
  m.n_traj_per_state = 0;
  EXPECT_THROW(m.validate(), DatasetError);

  m = small_manifest();
  assign_splits(m);
  const DatasetManifest back = manifest_from_json(manifest_to_json(m));
  EXPECT_EQ(back.n_initial_states, m.n_initial_states);
  EXPECT_EQ(back.master_seed, m.master_seed);
  EXPECT_EQ(back.train_states, m.train_states);
  EXPECT_EQ(back.created, m.created);
  EXPECT_LE((back.system_target.vec() - m.system_target.vec()).norm(), 0.0);
  EXPECT_THROW(manifest_from_json("{\"schema_version\": 1, \"bogus\": 2}"), std::exception);
}

TEST(Splits, DisjointAndCovering) {
  DatasetManifest m = small_manifest(20);
  assign_splits(m);
  EXPECT_EQ(m.train_states.size(), 16u);
  EXPECT_EQ(m.val_states.size(), 2u);
  EXPECT_EQ(m.test_states.size(), 2u);
  std::set<std::size_t> all;
  for (const auto* v : {&m.train_states, &m.val_states, &m.test_states}) all.insert(v->begin(), v->end());
  EXPECT_EQ(all.size(), 20u);
}

TEST(SampleRecordIo, RoundTripBitExact) {
  SampleRecord r;
  r.traj_id = 7;
  r.state_id = 2;
  r.rho0_re = {0.1 + 0.2, 1.0 / 3.0, 1.0 / 3.0, 1.0 - (0.1 + 0.2)};
  r.rho0_im = {0.0, -1e-300, 1e-300, 0.0};
  r.dr = {std::nextafter(0.1, 1.0), -5e-324, 123456789.123456789};
  r.dW = {1e-17, -0.0, 2.5};
  r.lambda_opt = {-50.0, 3.14159265358979, 49.999999999999993};
  r.lambda_token = {0, 35, 63};
  r.fidelity = {0.5, 0.6, 0.7, 0.8};
  const SampleRecord b = sample_from_json_line(to_jsonl_line(r));
  EXPECT_EQ(b.traj_id, r.traj_id);
  EXPECT_EQ(b.state_id, r.state_id);
  EXPECT_TRUE(bits_equal(b.rho0_re, r.rho0_re));
  EXPECT_TRUE(bits_equal(b.rho0_im, r.rho0_im));
  EXPECT_TRUE(bits_equal(b.dr, r.dr));
  EXPECT_TRUE(bits_equal(b.dW, r.dW));
  EXPECT_TRUE(bits_equal(b.lambda_opt, r.lambda_opt));
  EXPECT_EQ(b.lambda_token, r.lambda_token);
  EXPECT_TRUE(bits_equal(b.fidelity, r.fidelity));
  EXPECT_THROW(sample_from_json_line("{\"traj_id\": 1"), std::exception);
}

TEST(GenerateDataset, SingleEmptyTrajectory) {
  ScratchDir dir;
  DatasetManifest m = small_manifest(1, 1, 0);
  m.train_fraction = 1.0;
  m.val_fraction = 0.0;
  m.test_fraction = 0.0;
  const DatasetManifest out = generate_dataset(m, dir.path());
  EXPECT_EQ(out.summary.n_records, 1u);
  const auto recs = load_split(dir.path(), Split::kTrain);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_TRUE(recs[0].dr.empty());
  EXPECT_TRUE(recs[0].lambda_token.empty());
  EXPECT_EQ(recs[0].fidelity.size(), 1u);
}

TEST(GenerateDataset, ReproducibleAndConsistent) {
  ScratchDir a, b;
  DatasetManifest m = small_manifest();
  const DatasetManifest ma = generate_dataset(m, a.path(), 1);
  generate_dataset(m, b.path(), 3);
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "manifest.json"}) {
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  }

  std::set<std::size_t> seen_states[3];
  std::size_t total = 0;
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    for (const auto& r : load_split(a.path(), s)) {
      ++total;
      seen_states[static_cast<int>(s)].insert(r.state_id);
      ASSERT_EQ(r.dr.size(), m.n_steps);
      ASSERT_EQ(r.dW.size(), m.n_steps);
      ASSERT_EQ(r.lambda_opt.size(), m.n_steps);
      ASSERT_EQ(r.fidelity.size(), m.n_steps + 1);
      for (std::size_t k = 0; k < m.n_steps; ++k) {
        EXPECT_EQ(r.lambda_token[k], tokenize_lambda(m.grid, r.lambda_opt[k]));
        EXPECT_LT(r.lambda_token[k], m.grid.n_bins);
      }
    }
  }
  EXPECT_EQ(total, m.n_initial_states * m.n_traj_per_state);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      for (std::size_t s : seen_states[i]) EXPECT_EQ(seen_states[j].count(s), 0u);

  EXPECT_EQ(ma.summary.n_records, total);
  std::size_t hist = 0;
  for (std::size_t c : ma.summary.token_histogram) hist += c;
  EXPECT_EQ(hist, total * m.n_steps);
  EXPECT_GT(ma.record_std, 0.0);
}

TEST(GenerateDataset, TimestampOnlyDifference) {
  ScratchDir a, b;
  DatasetManifest m = small_manifest(5, 2, 10);
  m.created.clear();
  generate_dataset(m, a.path());
  generate_dataset(m, b.path());
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl"}) EXPECT_EQ(slurp(a / f), slurp(b / f));
  auto ma = load_manifest(a.path()), mb = load_manifest(b.path());
  EXPECT_FALSE(ma.created.empty());
  ma.created = mb.created;
  EXPECT_EQ(manifest_to_json(ma), manifest_to_json(mb));
}

TEST(GenerateDataset, LabelsMostlyInGridRange) {
  ScratchDir dir;
  const DatasetManifest m = generate_dataset(small_manifest(20, 5, 100), dir.path(), 4);
  EXPECT_TRUE(m.summary.in_range_ok()) << m.summary.clamped_fraction;
}

TEST(LoadSplit, ErrorsNamePath) {
  ScratchDir dir;
  try {
    load_manifest(dir.path());
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find(dir.path().string()), std::string::npos);
  }
  generate_dataset(small_manifest(10, 1, 3), dir.path());
  {
    std::ofstream(dir / "val.jsonl", std::ios::app) << "{not json\n";
  }
  try {
    load_split(dir.path(), Split::kVal);
    FAIL();
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("val.jsonl:"), std::string::npos) << e.what();
  }
}

TEST(Stride, SmallestFittingStride) {
  EXPECT_EQ(record_stride(100, 256), 1u);
  EXPECT_EQ(record_stride(255, 256), 1u);
  EXPECT_EQ(record_stride(256, 256), 2u);
  EXPECT_EQ(record_stride(2000, 1024), 2u);
  EXPECT_EQ(record_stride(2000, 201), 10u);
  for (std::size_t n = 1; n < 3000; n += 37) {
    const std::size_t s = record_stride(n, 128);
    EXPECT_LE((n + s - 1) / s, 127u);
    if (s > 1) EXPECT_GT((n + s - 2) / (s - 1), 127u);
  }
}

TEST(PrepareSequence, StandardizationAndStride) {
  DatasetManifest m = small_manifest(1, 1, 5);
  m.record_mean = 0.5;
  m.record_std = 2.0;
  SampleRecord r;
  r.rho0_re = {1, 0, 0, 0};
  r.rho0_im = {0, 0, 0, 0};
  r.dr = {1.0, 2.0, 3.0, 4.0, 5.0};
  r.lambda_opt = {0, 0, 0, 0, 0};
  r.lambda_token = {1, 2, 3, 4, 5};
  const auto full = prepare_sequence(r, m, 256);
  ASSERT_EQ(full.record.size(), 5u);
  EXPECT_DOUBLE_EQ(full.record[0], (1.0 - 0.5) / 2.0);
  EXPECT_EQ(full.targets, r.lambda_token);
  EXPECT_DOUBLE_EQ(full.features[0], 1.0);

  const auto strided = prepare_sequence(r, m, 3);  // stride 3: windows {0,1,2}, {3,4}
  ASSERT_EQ(strided.record.size(), 2u);
  EXPECT_NEAR(strided.record[0], (6.0 - 3 * 0.5) / (std::sqrt(3.0) * 2.0), 1e-15);
  EXPECT_NEAR(strided.record[1], (9.0 - 2 * 0.5) / (std::sqrt(2.0) * 2.0), 1e-15);
  EXPECT_EQ(strided.targets, (std::vector<std::size_t>{3, 5}));
}

TEST(Batches, ShapesAndTeacherForcing) {
  ScratchDir dir;
  generate_dataset(small_manifest(10, 3, 12), dir.path());
  const auto batches = load_batches(dir.path(), Split::kTrain, 4, 256, nullptr);
  ASSERT_FALSE(batches.empty());
  std::size_t n = 0;
  for (const auto& b : batches) {
    EXPECT_EQ(b.length, 12u);
    EXPECT_EQ(b.state_features.size(), b.batch_size * kStateFeatures);
    EXPECT_EQ(b.record.size(), b.batch_size * b.length);
    EXPECT_EQ(b.decoder_tokens.size(), b.batch_size * b.length);
    EXPECT_EQ(b.targets.size(), b.batch_size * b.length);
    for (std::size_t i = 0; i < b.batch_size; ++i) {
      EXPECT_EQ(b.decoder_tokens[i * b.length], 64u);
      for (std::size_t k = 1; k < b.length; ++k) {
        EXPECT_EQ(b.decoder_tokens[i * b.length + k], b.targets[i * b.length + k - 1]);
      }
    }
    n += b.batch_size;
  }
  EXPECT_EQ(n, load_split(dir.path(), Split::kTrain).size());

  RngStream s1(3), s2(3);
  const auto x = load_batches(dir.path(), Split::kTrain, 4, 256, &s1);
  const auto y = load_batches(dir.path(), Split::kTrain, 4, 256, &s2);
  ASSERT_EQ(x.size(), y.size());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(x[i].traj_ids, y[i].traj_ids);
}

TEST(Batches, SingleStep) {
  ScratchDir dir;
  generate_dataset(small_manifest(10, 1, 1), dir.path());
  const auto batches = load_batches(dir.path(), Split::kTrain, 16, 256, nullptr);
  ASSERT_EQ(batches.size(), 1u);
  EXPECT_EQ(batches[0].length, 1u);
  for (std::size_t i = 0; i < batches[0].batch_size; ++i) EXPECT_EQ(batches[0].decoder_tokens[i], 64u);
}
