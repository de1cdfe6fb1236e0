#include "qfc/rnn.hpp"
#include "qfc/seqmodel.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

using namespace qfc;

namespace {

RnnConfig small(CellKind kind) {
  RnnConfig c;
  c.cell = kind;
  c.hidden_dim = 12;
  c.embed_dim = 10;
  c.dropout = 0.0;
  return c;
}

Tensor randn(Shape s, RngStream& rng, bool grad = false) {
  std::vector<double> v(shape_size(s));
  for (double& x : v) x = rng.normal();
  return Tensor::from(std::move(s), std::move(v), grad);
}

void zero(Tensor t) {
  if (t.defined()) std::fill(t.mutable_values().begin(), t.mutable_values().end(), 0.0);
}

}  // namespace

TEST(RnnCell, ZeroWeightsGiveZero) {
  RecurrentModel m(small(CellKind::kVanilla), 1);
  zero(m.cell_params().wx.w);
  zero(m.cell_params().wx.b);
  zero(m.cell_params().wh.w);
  RngStream rng(2);
  const auto h = m.cell(randn({3, 10}, rng), randn({3, 12}, rng)).values();
  for (double v : h) EXPECT_EQ(v, 0.0);
}

TEST(RnnCell, SaturatedUpdateGateGivesCandidate) {
  RecurrentModel m(small(CellKind::kGru), 3);
  const RnnCellParams& p = m.cell_params();
  Tensor bz = p.wz.b;
  std::fill(bz.mutable_values().begin(), bz.mutable_values().end(), 50.0);
  RngStream rng(4);
  const Tensor x = randn({2, 10}, rng), h = randn({2, 12}, rng);
  const Tensor r = sigmoid(add(apply(p.wr, x), apply(p.ur, h)));
  const Tensor n = tanh(add(apply(p.wn, x), apply(p.un, mul(r, h))));
  const auto got = m.cell(x, h).values();
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], n.values()[i], 1e-6);
}

TEST(RnnCell, ShapeMismatch) {
  const RecurrentModel m(small(CellKind::kGru), 5);
  EXPECT_THROW(m.cell(Tensor::zeros({2, 9}), Tensor::zeros({2, 12})), ShapeError);
  EXPECT_THROW(m.cell(Tensor::zeros({2, 10}), Tensor::zeros({3, 12})), ShapeError);
}

class RnnGradient : public ::testing::TestWithParam<CellKind> {};

TEST_P(RnnGradient, CellMatchesFiniteDifferences) {
  RecurrentModel m(small(GetParam()), 6);
  RngStream rng(7);
  Tensor x = randn({2, 10}, rng, true), h = randn({2, 12}, rng, true);
  const Tensor probe = randn({2, 12}, rng);
  const RnnCellParams& p = m.cell_params();
  std::vector<Tensor> params{x, h};
  for (const Linear* l : {&p.wx, &p.wh, &p.wz, &p.uz, &p.wr, &p.ur, &p.wn, &p.un}) {
    if (l->w.defined()) params.push_back(l->w);
    if (l->b.defined()) params.push_back(l->b);
  }
  EXPECT_LE(grad_check([&] { return sum(mul(m.cell(x, h), probe)); }, params), 1e-4);
}

TEST_P(RnnGradient, WindowMatchesFiniteDifferences) {
  RecurrentModel m(small(GetParam()), 8);
  const std::vector<std::size_t> tokens{64, 3, 17, 3, 60, 8};
  const std::vector<double> record{0.1, -0.4, 1.2, 0.0, -0.9, 0.5};
  const Tensor state = Tensor::from({2, kStateFeatures}, std::vector<double>(16, 0.25));
  GradCheckOptions o;
  o.max_coords = 150;
  o.seed = 9;
  // Six steps deep some gradients are ~1e-7, where central differences at
  // h = 1e-5 are roundoff-limited; those are compared on an absolute scale.
  o.denominator_floor = 1e-3;
  const auto loss = [&] {
    const auto w = m.run_window(tokens, record, 2, m.initial_hidden(state));
    return cross_entropy(w.logits, std::vector<std::size_t>{1, 2, 3, 4, 5, 6});
  };
  std::vector<Tensor> params;
  for (auto& np : m.parameters()) params.push_back(np.tensor);
  EXPECT_LE(grad_check(loss, params, o), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Cells, RnnGradient, ::testing::Values(CellKind::kVanilla, CellKind::kGru));

TEST(RnnWindow, RejectsArraysLongerThanWindow) {
  const RecurrentModel m(small(CellKind::kGru), 10);
  const Tensor h0 = m.initial_hidden(Tensor::zeros({1, kStateFeatures}));
  const std::vector<std::size_t> tokens{64, 1, 2};
  const std::vector<double> record{0.0, 0.1, 0.2};
  EXPECT_EQ(m.run_window(tokens, record, 1, h0).logits.shape(), (Shape{3, 65}));
  const std::vector<double> longer{0.0, 0.1, 0.2, 0.3};
  EXPECT_THROW(m.run_window(tokens, longer, 1, h0), ShapeError);
}

TEST(RnnModel, PredictNextMatchesSession) {
  for (CellKind kind : {CellKind::kVanilla, CellKind::kGru}) {
    const RecurrentModel m(small(kind), 11);
    RngStream rng(12);
    std::vector<double> state(kStateFeatures), record;
    for (double& s : state) s = rng.normal();
    RnnSession session(m);
    session.reset(state);
    std::vector<std::size_t> prev;
    for (std::size_t k = 0; k < 60; ++k) {
      record.push_back(rng.normal());
      const std::size_t tok = session.step(record.back());
      EXPECT_EQ(tok, m.predict_next(state, record, prev));
      prev.push_back(tok);
    }
    // Full-sequence hidden state after the same 60 steps.
    NoGradGuard g;
    std::vector<std::size_t> tokens{m.config().bos()};
    tokens.insert(tokens.end(), prev.begin(), prev.end() - 1);
    const auto full = m.run_window(tokens, record, 1, m.initial_hidden(Tensor::from({1, kStateFeatures}, state)));
    ASSERT_EQ(full.hidden.size(), static_cast<std::size_t>(session.hidden().size()));
    EXPECT_EQ(std::memcmp(full.hidden.values().data(), session.hidden().data(), full.hidden.size() * sizeof(double)),
              0)
        << to_string(kind);
  }
}

TEST(RnnModel, Deterministic) {
  const RecurrentModel a(small(CellKind::kGru), 13), b(small(CellKind::kGru), 13);
  const std::vector<double> state(kStateFeatures, 0.3), record{0.2, -0.1, 0.7};
  const std::vector<std::size_t> prev{5, 9};
  EXPECT_EQ(a.predict_next(state, record, prev), b.predict_next(state, record, prev));
  EXPECT_THROW(a.predict_next(state, record, std::vector<std::size_t>{1}), std::invalid_argument);
}

TEST(RnnModel, TruncationOneIsPerStepMap) {
  RnnConfig c = small(CellKind::kGru);
  c.truncation_len = 1;
  auto model = make_recurrent_model(c, 14);
  Batch b;
  b.batch_size = 2;
  b.length = 5;
  b.state_features.assign(2 * kStateFeatures, 0.1);
  for (std::size_t i = 0; i < 10; ++i) {
    b.record.push_back(0.1 * static_cast<double>(i));
    b.decoder_tokens.push_back(i % 5 == 0 ? 64 : i);
    b.targets.push_back(i + 1);
  }
  b.traj_ids = {0, 1};
  std::size_t updates = 0;
  const double loss = model->fit_batch(b, ForwardContext{}, [&] { ++updates; });
  EXPECT_TRUE(std::isfinite(loss));
  EXPECT_EQ(updates, 5u);
}

TEST(RnnConfig, ValidationAndJson) {
  RnnConfig c = small(CellKind::kVanilla);
  const RnnConfig back = rnn_config_from_json(to_json(c));
  EXPECT_EQ(back.cell, CellKind::kVanilla);
  EXPECT_EQ(back.hidden_dim, 12u);
  c.truncation_len = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(cell_kind_from_string("lstm"), std::invalid_argument);
}
