#include "qfc/transformer.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

using namespace qfc;

namespace {

TransformerConfig small_config() {
  TransformerConfig c;
  c.n_enc_layers = 2;
  c.n_dec_layers = 2;
  c.d_model = 16;
  c.n_heads = 4;
  c.d_ff = 32;
  c.context_len = 64;
  c.dropout = 0.0;
  return c;
}

struct Inputs {
  std::vector<double> state, record;
  std::vector<std::size_t> tokens;
};

Inputs random_inputs(std::size_t len, std::uint64_t seed, std::size_t vocab = 65) {
  RngStream rng(seed);
  Inputs in;
  for (std::size_t i = 0; i < kStateFeatures; ++i) in.state.push_back(rng.normal());
  for (std::size_t i = 0; i < len; ++i) {
    in.record.push_back(rng.normal());
    in.tokens.push_back(i == 0 ? vocab - 1 : rng.uniform_index(vocab - 1));
  }
  return in;
}

std::vector<double> full_logits(const QuantumTransformer& m, const Inputs& in) {
  NoGradGuard g;
  const std::size_t len = in.record.size();
  const Tensor s = Tensor::from({1, kStateFeatures}, in.state);
  const Tensor r = Tensor::from({1, len, 1}, in.record);
  return m.decode(m.encode(s, r), in.tokens, r).values();
}

}  // namespace

TEST(PositionalEncoding, Examples) {
  const Tensor pe = positional_encoding(1024, 64);
  const auto& v = pe.values();
  for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(v[j], j % 2 == 0 ? 0.0 : 1.0);
  for (std::size_t p = 0; p < 1024; p += 7) {
    for (std::size_t q = p + 1; q < std::min<std::size_t>(1024, p + 40); ++q) {
      double d = 0.0;
      for (std::size_t j = 0; j < 64; ++j) d = std::max(d, std::abs(v[p * 64 + j] - v[q * 64 + j]));
      EXPECT_GE(d, 1e-3);
    }
  }
  EXPECT_EQ(positional_encoding(10, 8).values(), positional_encoding(10, 8).values());
  EXPECT_THROW(positional_encoding(300, 64, 256), std::length_error);
}

TEST(Attention, SingletonKey) {
  const Tensor q = Tensor::from({3, 2}, {10.0, -3.0, 0.0, 0.0, 7.0, 1.0});
  const Tensor k = Tensor::from({1, 2}, {-2.0, 5.0});
  const Tensor v = Tensor::from({1, 3}, {1.5, -2.0, 0.25});
  const auto out = attention(q, k, v, nullptr).values();
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_DOUBLE_EQ(out[i * 3 + 0], 1.5);
    EXPECT_DOUBLE_EQ(out[i * 3 + 1], -2.0);
    EXPECT_DOUBLE_EQ(out[i * 3 + 2], 0.25);
  }
}

TEST(Attention, IdenticalKeysAverageValues) {
  const Tensor q = Tensor::from({2, 2}, {3.0, 1.0, -1.0, 0.5});
  const Tensor k = Tensor::from({4, 2}, {1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 1.0, 2.0});
  const Tensor v = Tensor::from({4, 1}, {1.0, 2.0, 3.0, 6.0});
  const auto out = attention(q, k, v, nullptr).values();
  EXPECT_NEAR(out[0], 3.0, 1e-14);
  EXPECT_NEAR(out[1], 3.0, 1e-14);
}

TEST(Attention, HandCase) {
  const Tensor id = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const auto out = attention(id, id, id, nullptr).values();
  const double e = std::exp(1.0 / std::sqrt(2.0));
  EXPECT_NEAR(out[0], e / (e + 1.0), 1e-14);
  EXPECT_NEAR(out[0], 0.670, 1e-3);
  EXPECT_NEAR(out[1], 0.330, 1e-3);
  EXPECT_NEAR(out[2], 0.330, 1e-3);
  EXPECT_NEAR(out[3], 0.670, 1e-3);
}

TEST(Attention, MaskAndErrors) {
  const Tensor q = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  const Tensor v = Tensor::from({2, 1}, {1.0, 5.0});
  const auto causal = AttentionMask::causal(2, 2);
  const auto out = attention(q, q, v, &causal).values();
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  AttentionMask none{2, 2, {0, 0, 1, 1}};
  EXPECT_THROW(attention(q, q, v, &none), std::domain_error);
  EXPECT_THROW(attention(q, Tensor::zeros({2, 3}), v, nullptr), ShapeError);
}

TEST(MultiHeadAttention, SingleHeadIsAttentionPlusProjection) {
  RngStream rng(3);
  ParameterList params;
  const AttentionParams p = make_attention(8, rng, "a", params);
  RngStream in(4);
  std::vector<double> xv(5 * 8);
  for (double& x : xv) x = in.normal();
  const Tensor x = Tensor::from({1, 5, 8}, xv);
  NoGradGuard g;
  const auto mha = multi_head_attention(x, x, nullptr, p, 1).values();
  const Tensor manual = apply(p.o, attention(apply(p.q, x), apply(p.k, x), apply(p.v, x), nullptr));
  const auto& mv = manual.values();
  for (std::size_t i = 0; i < mha.size(); ++i) EXPECT_NEAR(mha[i], mv[i], 1e-13);
  EXPECT_EQ(multi_head_attention(slice(x, 1, 0, 3), x, nullptr, p, 4).shape(), (Shape{1, 3, 8}));
}

TEST(MultiHeadAttention, ZeroValueProjectionGivesZero) {
  RngStream rng(5);
  ParameterList params;
  AttentionParams p = make_attention(8, rng, "a", params);
  Tensor vw = p.v.w;
  std::fill(vw.mutable_values().begin(), vw.mutable_values().end(), 0.0);
  const Tensor x = Tensor::full({1, 4, 8}, 0.3);
  const Tensor y = multi_head_attention(x, x, nullptr, p, 2);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Transformer, EncoderShapes) {
  const QuantumTransformer m(small_config(), 1);
  const Tensor s = Tensor::zeros({2, kStateFeatures});
  EXPECT_EQ(m.encode(s, Tensor::zeros({2, 0, 1})).shape(), (Shape{2, 1, 16}));
  EXPECT_EQ(m.encode(s, Tensor::zeros({2, 7, 1})).shape(), (Shape{2, 8, 16}));
}

TEST(Transformer, PositionalEncodingBreaksPermutationSymmetry) {
  const QuantumTransformer m(small_config(), 2);
  NoGradGuard g;
  const Tensor s = Tensor::zeros({1, kStateFeatures});
  const auto a = m.encode(s, Tensor::from({1, 3, 1}, {1.0, 2.0, 3.0})).values();
  const auto b = m.encode(s, Tensor::from({1, 3, 1}, {3.0, 2.0, 1.0})).values();
  EXPECT_NE(a, b);
}

TEST(Transformer, LogitShapesAndSoftmax) {
  const QuantumTransformer m(small_config(), 3);
  NoGradGuard g;
  const Tensor s = Tensor::zeros({1, kStateFeatures});
  const Tensor r1 = Tensor::from({1, 1, 1}, {0.4});
  const std::vector<std::size_t> bos{64};
  EXPECT_EQ(m.decode(m.encode(s, r1), bos, r1).shape(), (Shape{1, 1, 65}));

  const Inputs in = random_inputs(9, 4);
  const Tensor r = Tensor::from({1, 9, 1}, in.record);
  const auto p = softmax(m.decode(m.encode(Tensor::from({1, kStateFeatures}, in.state), r), in.tokens, r)).values();
  for (std::size_t k = 0; k < 9; ++k) {
    double total = 0.0;
    for (std::size_t v = 0; v < 65; ++v) total += p[k * 65 + v];
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Transformer, DecoderCausalityBitExact) {
  const QuantumTransformer m(small_config(), 5);
  const Inputs in = random_inputs(10, 6);
  const auto base = full_logits(m, in);
  for (std::size_t kp = 1; kp < 10; ++kp) {
    Inputs p = in;
    p.tokens[kp] = (p.tokens[kp] + 7) % 64;
    p.record[kp] += 2.5;
    const auto pert = full_logits(m, p);
    EXPECT_EQ(std::memcmp(base.data(), pert.data(), kp * 65 * sizeof(double)), 0) << "k' = " << kp;
    EXPECT_FALSE(std::equal(base.begin() + kp * 65, base.begin() + (kp + 1) * 65, pert.begin() + kp * 65));
  }
}

TEST(Transformer, ZeroHeadPredictsTokenZero) {
  QuantumTransformer m(small_config(), 7);
  Tensor w = m.head().w, b = m.head().b;
  std::fill(w.mutable_values().begin(), w.mutable_values().end(), 0.0);
  std::fill(b.mutable_values().begin(), b.mutable_values().end(), 0.0);
  const Inputs in = random_inputs(4, 8);
  const std::vector<std::size_t> prev(in.tokens.begin() + 1, in.tokens.end());
  EXPECT_EQ(m.predict_next(in.state, in.record, prev), 0u);
}

TEST(Transformer, PredictNextDeterministicAndMatchesDecode) {
  const QuantumTransformer m(small_config(), 9);
  const Inputs in = random_inputs(6, 10);
  const std::vector<std::size_t> prev(in.tokens.begin() + 1, in.tokens.end());
  const std::size_t a = m.predict_next(in.state, in.record, prev);
  EXPECT_EQ(a, m.predict_next(in.state, in.record, prev));
  const auto logits = full_logits(m, in);
  EXPECT_EQ(a, argmax_lowest(logits.data() + 5 * 65, 65));
}

TEST(TransformerSession, IncrementalMatchesFullSequence) {
  TransformerConfig cfg = small_config();
  const QuantumTransformer m(cfg, 11);
  RngStream rng(12);
  std::vector<double> state(kStateFeatures), record;
  for (double& s : state) s = rng.normal();
  TransformerSession session(m);
  session.reset(state);
  std::vector<std::size_t> tokens{cfg.bos()};
  for (std::size_t k = 0; k < 40; ++k) {
    record.push_back(rng.normal());
    const std::size_t tok = session.step(record.back());
    const std::vector<std::size_t> prev(tokens.begin() + 1, tokens.end());
    EXPECT_EQ(tok, m.predict_next(state, record, prev)) << "step " << k;

    Inputs in{state, record, tokens};
    const auto logits = full_logits(m, in);
    for (std::size_t v = 0; v < 65; ++v) EXPECT_NEAR(session.last_logits()(v), logits[k * 65 + v], 1e-10);
    tokens.push_back(tok);
  }
  EXPECT_EQ(session.position(), 40u);
}

TEST(TransformerSession, RespectsContext) {
  TransformerConfig cfg = small_config();
  cfg.context_len = 8;
  const QuantumTransformer m(cfg, 13);
  TransformerSession session(m);
  session.reset(std::vector<double>(kStateFeatures, 0.1));
  for (int k = 0; k < 7; ++k) session.step(0.1 * k);
  EXPECT_THROW(session.step(1.0), std::length_error);
}

TEST(TransformerConfig, ValidationAndJson) {
  TransformerConfig c = small_config();
  const TransformerConfig back = transformer_config_from_json(to_json(c));
  EXPECT_EQ(back.d_model, c.d_model);
  EXPECT_EQ(back.n_heads, c.n_heads);
  EXPECT_EQ(back.dropout, c.dropout);
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  Json j = to_json(small_config());
  j["extra"] = 1;
  EXPECT_THROW(transformer_config_from_json(j), ConfigError);
}

TEST(Transformer, SameSeedSameParameters) {
  const QuantumTransformer a(small_config(), 21), b(small_config(), 21), c(small_config(), 22);
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].name, b.parameters()[i].name);
    EXPECT_EQ(a.parameters()[i].tensor.values(), b.parameters()[i].tensor.values());
    differs = differs || a.parameters()[i].tensor.values() != c.parameters()[i].tensor.values();
  }
  EXPECT_TRUE(differs);
}
