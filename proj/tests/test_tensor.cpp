#include "qfc/checkpoint.hpp"
#include "qfc/tensor.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

using namespace qfc;

namespace {

Tensor randn(Shape s, RngStream& rng, bool grad = true) {
  std::vector<double> v(shape_size(s));
  for (double& x : v) x = rng.normal();
  return Tensor::from(std::move(s), std::move(v), grad);
}

}  // namespace

TEST(Tensor, Construction) {
  const Tensor t = Tensor::zeros({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.dim(-1), 3u);
  EXPECT_FALSE(t.has_grad());
  EXPECT_THROW(Tensor::from({2, 2}, {1.0, 2.0}), ShapeError);
  EXPECT_THROW(Tensor::zeros({2}).item(), std::exception);
}

TEST(Tensor, ForwardExamples) {
  const auto s = softmax(Tensor::from({3}, {0.0, 0.0, 0.0})).values();
  for (double x : s) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);

  const Tensor ln =
      layer_norm(Tensor::from({3}, {1.0, 2.0, 3.0}), Tensor::full({3}, 1.0), Tensor::zeros({3}));
  const double r = std::sqrt(1.5);
  EXPECT_NEAR(ln.values()[0], -r, 1e-5);
  EXPECT_NEAR(ln.values()[1], 0.0, 1e-15);
  EXPECT_NEAR(ln.values()[2], r, 1e-5);
  EXPECT_NEAR(ln.values()[2], 1.0 / std::sqrt(2.0 / 3.0 + 1e-5), 1e-14);

  const std::vector<std::size_t> target{0};
  EXPECT_NEAR(cross_entropy(Tensor::from({1, 2}, {0.0, 0.0}), target).item(), std::log(2.0), 1e-15);
}

TEST(Tensor, SoftmaxRowsAndMasking) {
  RngStream rng(1);
  const Tensor x = randn({4, 7}, rng, false);
  const auto s = softmax(affine(x, 30.0)).values();
  for (std::size_t i = 0; i < 4; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_GE(s[i * 7 + j], 0.0);
      total += s[i * 7 + j];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
  const double inf = std::numeric_limits<double>::infinity();
  const auto masked = softmax(Tensor::from({2}, {-inf, 3.0})).values();
  EXPECT_EQ(masked[0], 0.0);
  EXPECT_EQ(masked[1], 1.0);
  EXPECT_THROW(softmax(Tensor::from({2}, {-inf, -inf})), std::domain_error);
  EXPECT_THROW(softmax(Tensor::zeros({2, 0})), std::exception);
}

TEST(Tensor, ShapeErrors) {
  EXPECT_THROW(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  EXPECT_THROW(add(Tensor::zeros({2, 3}), Tensor::zeros({2})), ShapeError);
  EXPECT_THROW(reshape(Tensor::zeros({2, 3}), {4}), ShapeError);
  EXPECT_THROW(concat({Tensor::zeros({2, 3}), Tensor::zeros({3, 2})}, 0), ShapeError);
  EXPECT_THROW(slice(Tensor::zeros({2, 3}), 1, 2, 2), ShapeError);
  const std::vector<std::size_t> idx{5};
  EXPECT_THROW(embedding(Tensor::zeros({3, 2}), idx, {1}), std::exception);
}

TEST(Backward, Examples) {
  RngStream rng(2);
  Tensor w = randn({3, 4}, rng);
  sum(w).backward();
  for (double g : w.grad()) EXPECT_EQ(g, 1.0);

  Tensor a = randn({2, 3}, rng), b = randn({3, 4}, rng);
  sum(matmul(a, b)).backward();
  const auto ga = a.grad();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      double row = 0.0;
      for (std::size_t j = 0; j < 4; ++j) row += b.values()[k * 4 + j];
      EXPECT_NEAR(ga[i * 3 + k], row, 1e-14);
    }
}

TEST(Backward, Errors) {
  RngStream rng(3);
  Tensor w = randn({2, 2}, rng);
  EXPECT_THROW(mul(w, w).backward(), std::exception);
  Tensor loss = sum(mul(w, w));
  loss.backward();
  EXPECT_THROW(loss.backward(), std::logic_error);

  Tensor unused = randn({3}, rng);
  Tensor other = randn({3}, rng);
  sum(other).backward();
  EXPECT_FALSE(unused.has_grad());
  for (double g : unused.grad()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, GradientsAccumulateUntilCleared) {
  Tensor x = Tensor::from({2}, {1.0, 2.0}, true);
  sum(scale(x, 3.0)).backward();
  sum(scale(x, 3.0)).backward();
  EXPECT_EQ(x.grad()[0], 6.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Backward, SharedSubexpressionVisitedOnce) {
  Tensor x = Tensor::from({1}, {1.5}, true);
  const Tensor y = tanh(x);
  sum(add(mul(y, y), y)).backward();
  const double t = std::tanh(1.5);
  EXPECT_NEAR(x.grad()[0], (2 * t + 1) * (1 - t * t), 1e-15);
}

TEST(Backward, NoGradGuard) {
  Tensor x = Tensor::from({1}, {1.0}, true);
  {
    NoGradGuard g;
    EXPECT_FALSE(grad_enabled());
    const Tensor y = scale(x, 2.0);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
}

TEST(Backward, ThreeLinearLayersMatchFiniteDifferences) {
  RngStream rng(4);
  Tensor x = randn({5, 4}, rng, false);
  Tensor w1 = randn({4, 6}, rng), w2 = randn({6, 6}, rng), w3 = randn({6, 2}, rng);
  const Tensor c = randn({5, 2}, rng, false);
  const auto f = [&] { return sum(mul(matmul(matmul(matmul(x, w1), w2), w3), c)); };
  EXPECT_LE(grad_check(f, {w1, w2, w3}), 1e-6);
}

TEST(GradCheck, LinearIsExact) {
  RngStream rng(5);
  Tensor w = randn({3, 3}, rng);
  Tensor c = randn({3, 3}, rng, false);
  EXPECT_LE(grad_check([&] { return sum(mul(w, c)); }, {w}), 1e-9);
}

TEST(GradCheck, DetectsWrongGradient) {
  // A hand-built op with a deliberately wrong adjoint must be caught.
  Tensor x = Tensor::from({2}, {0.3, -0.7}, true);
  const auto bad_square = [](const Tensor& a) {
    std::vector<double> v = a.values();
    for (double& e : v) e *= e;
    return make_tensor(a.shape(), v, {a}, [a](const detail::Node& out) mutable {
      auto& g = a.node()->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += out.grad[i] * a.values()[i];  // missing factor 2
    });
  };
  EXPECT_GT(grad_check([&] { return sum(bad_square(x)); }, {x}), 0.1);
}

TEST(GradCheck, ReluKinkExcluded) {
  Tensor x = Tensor::from({3}, {0.0, 1.0, -2.0}, true);
  std::size_t kinks = 0;
  GradCheckOptions o;
  o.n_kinks = &kinks;
  EXPECT_LE(grad_check([&] { return sum(relu(x)); }, {x}, o), 1e-9);
  EXPECT_EQ(kinks, 1u);
  o.exclude_relu_kinks = false;
  EXPECT_GT(grad_check([&] { return sum(relu(x)); }, {x}, o), 0.1);
}

TEST(Tensor, DeterministicForwardBackward) {
  const auto run = [] {
    RngStream rng(9);
    Tensor a = randn({4, 5}, rng), b = randn({5, 3}, rng), g = randn({3}, rng), bias = randn({3}, rng);
    Tensor loss = mean(softmax(layer_norm(tanh(matmul(a, b)), g, bias)));
    loss.backward();
    auto v = a.grad();
    v.push_back(loss.item());
    return v;
  };
  const auto x = run(), y = run();
  EXPECT_EQ(std::memcmp(x.data(), y.data(), x.size() * sizeof(double)), 0);
}

TEST(Tensor, DropoutInvertedAndIdentityInEval) {
  RngStream rng(10);
  const Tensor x = Tensor::full({10000}, 1.0);
  const auto y = dropout(x, 0.25, rng, true).values();
  double total = 0.0;
  for (double v : y) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
    total += v;
  }
  EXPECT_NEAR(total / 10000.0, 1.0, 0.05);
  EXPECT_EQ(dropout(x, 0.25, rng, false).values(), x.values());
}

TEST(Checkpoint, RoundTripAndErrors) {
  qfc::testing::ScratchDir dir;
  RngStream rng(11);
  ParameterList params{{"a.w", randn({3, 2}, rng)}, {"b", randn({4}, rng)}};
  save_checkpoint(dir / "ck", "transformer", Json{{"d_model", 8}}, Json{{"epoch", 3}}, params);
  const Checkpoint ck = load_checkpoint(dir / "ck");
  EXPECT_EQ(ck.kind, "transformer");
  EXPECT_EQ(ck.metadata["epoch"], 3);

  ParameterList fresh{{"a.w", Tensor::zeros({3, 2}, true)}, {"b", Tensor::zeros({4}, true)}};
  assign_parameters(ck, fresh);
  for (std::size_t i = 0; i < params.size(); ++i) {
    EXPECT_EQ(std::memcmp(fresh[i].tensor.values().data(), params[i].tensor.values().data(),
                          params[i].tensor.size() * sizeof(double)),
              0);
  }
  ParameterList wrong{{"a.w", Tensor::zeros({2, 3}, true)}, {"b", Tensor::zeros({4}, true)}};
  EXPECT_THROW(assign_parameters(ck, wrong), CheckpointError);
  ParameterList missing{{"a.w", Tensor::zeros({3, 2}, true)}};
  EXPECT_THROW(assign_parameters(ck, missing), CheckpointError);
  try {
    load_checkpoint(dir / "nope");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find((dir / "nope").string()), std::string::npos);
  }
}
