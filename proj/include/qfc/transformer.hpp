// transformer.hpp: encoder-decoder model over measurement records.
//
// Encoder position 0 is a projection of the initial-state features; position
// j >= 1 embeds r_{j-1}. Encoder self-attention is causal, and decoder
// position k cross-attends to memory positions <= k + 1 (prefix and
// r_0..r_k), so no position ever sees a later record sample. Decoder input k
// is token(lambda_{k-1}, or BOS at k = 0) + linear(r_k) + PE(k). Layers are
// post-norm: x = LN(x + sublayer(x)).

#pragma once

#include "qfc/dataset.hpp"
#include "qfc/nn.hpp"
#include "qfc/serialize.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace qfc {

struct TransformerConfig {
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t context_len = 256;
  std::size_t vocab = 65;  // n_bins + 1; the last token is BOS
  double dropout = 0.1;

  void validate() const;
  std::size_t bos() const { return vocab - 1; }
};

Json to_json(const TransformerConfig& c);
TransformerConfig transformer_config_from_json(const Json& j, const std::string& where = "transformer");

// Sinusoidal encoding, shape (length, d_model): even columns sin(p w_i), odd
// columns cos(p w_i), w_i = 10000^(-2i / d_model). Throws if length exceeds a
// non-zero context_len.
Tensor positional_encoding(std::size_t length, std::size_t d_model, std::size_t context_len = 0);

// Row-major (rows, cols); true = attend.
struct AttentionMask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<char> allow;

  static AttentionMask all(std::size_t rows, std::size_t cols);
  // Row i attends to columns <= i + offset.
  static AttentionMask causal(std::size_t rows, std::size_t cols, std::size_t offset = 0);
  // 0 where allowed, -inf elsewhere. Throws on a row with nothing allowed.
  std::vector<double> additive() const;
};

// softmax(Q K^T / sqrt(d_k)) V with Q [..., Lq, d_k], K [..., Lk, d_k],
// V [..., Lk, d_v]. mask may be null.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask* mask);

struct AttentionParams {
  Linear q, k, v, o;
};

AttentionParams make_attention(std::size_t d_model, RngStream& rng, const std::string& name, ParameterList& params);

// x_q [B, Lq, D], x_kv [B, Lk, D] -> [B, Lq, D].
Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionMask* mask,
                            const AttentionParams& p, std::size_t n_heads);

struct EncoderLayer {
  AttentionParams self_attn;
  LayerNormParams ln1;
  Linear ff1, ff2;
  LayerNormParams ln2;
};

struct DecoderLayer {
  AttentionParams self_attn;
  LayerNormParams ln1;
  AttentionParams cross_attn;
  LayerNormParams ln2;
  Linear ff1, ff2;
  LayerNormParams ln3;
};

class QuantumTransformer {
 public:
  QuantumTransformer(const TransformerConfig& config, std::uint64_t seed);

  const TransformerConfig& config() const { return config_; }
  ParameterList& parameters() { return params_; }
  const ParameterList& parameters() const { return params_; }

  // state [B, 8], record [B, L, 1] -> memory [B, L + 1, D].
  Tensor encode(const Tensor& state, const Tensor& record, const ForwardContext& ctx = {}) const;
  // tokens B x L (row-major), record [B, L, 1] -> logits [B, L, vocab].
  Tensor decode(const Tensor& memory, std::span<const std::size_t> tokens, const Tensor& record,
                const ForwardContext& ctx = {}) const;
  Tensor forward(const Batch& batch, const ForwardContext& ctx = {}) const;

  // Greedy token after the given prefix: record r_0..r_k (standardized) and
  // previous tokens lambda_0..lambda_{k-1}.
  std::size_t predict_next(std::span<const double> state, std::span<const double> record,
                           std::span<const std::size_t> previous_tokens) const;

  // Layer components, exposed for inspection and the incremental session.
  const Linear& state_embedding() const { return state_emb_; }
  const Linear& encoder_record_embedding() const { return enc_rec_emb_; }
  const Linear& decoder_record_embedding() const { return dec_rec_emb_; }
  const Tensor& token_embedding() const { return tok_emb_; }
  const std::vector<EncoderLayer>& encoder_layers() const { return enc_; }
  const std::vector<DecoderLayer>& decoder_layers() const { return dec_; }
  const Linear& head() const { return head_; }

 private:
  TransformerConfig config_;
  ParameterList params_;
  Linear state_emb_, enc_rec_emb_, dec_rec_emb_;
  Tensor tok_emb_;
  std::vector<EncoderLayer> enc_;
  std::vector<DecoderLayer> dec_;
  Linear head_;
};

// Step-by-step greedy inference with cached keys and values; equivalent to
// predict_next on the growing prefix at O(L) cost per step.
class TransformerSession {
 public:
  explicit TransformerSession(const QuantumTransformer& model);

  void reset(std::span<const double> state);
  // Consumes r_k (standardized), returns the greedy token lambda_k.
  std::size_t step(double record_value);
  // Logits produced by the last step.
  const Eigen::RowVectorXd& last_logits() const { return logits_; }
  std::size_t position() const { return dec_pos_; }

 private:
  struct Cache {
    RowMatrix k, v;
    Eigen::Index n = 0;
  };
  Eigen::RowVectorXd attend(const AttentionParams& p, const Eigen::RowVectorXd& q_in, Cache& cache) const;
  void append_kv(const AttentionParams& p, const Eigen::RowVectorXd& x, Cache& cache) const;
  void encoder_push(const Eigen::RowVectorXd& x0);

  const QuantumTransformer& model_;
  Tensor pe_;
  std::vector<Cache> enc_cache_;
  std::vector<Cache> dec_self_cache_;
  std::vector<Cache> dec_cross_cache_;
  std::size_t enc_pos_ = 0;
  std::size_t dec_pos_ = 0;
  std::size_t prev_token_ = 0;
  Eigen::RowVectorXd logits_;
};

}  // namespace qfc
