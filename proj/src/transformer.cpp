#include "qfc/transformer.hpp"

#include <cmath>
#include <limits>

namespace qfc {

void TransformerConfig::validate() const {
  if (n_enc_layers == 0 || n_dec_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0) {
    throw std::invalid_argument("transformer: layer counts and widths must be positive");
  }
  if (d_model % n_heads != 0) throw std::invalid_argument("transformer: d_model must be divisible by n_heads");
  if (d_model % 2 != 0) throw std::invalid_argument("transformer: d_model must be even");
  if (context_len < 2) throw std::invalid_argument("transformer: context_len must be >= 2");
  if (vocab < 2) throw std::invalid_argument("transformer: vocab must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("transformer: dropout must be in [0, 1)");
}

Json to_json(const TransformerConfig& c) {
  return Json{{"n_enc_layers", c.n_enc_layers}, {"n_dec_layers", c.n_dec_layers}, {"d_model", c.d_model},
              {"n_heads", c.n_heads},           {"d_ff", c.d_ff},                 {"context_len", c.context_len},
              {"vocab", c.vocab},               {"dropout", c.dropout}};
}

TransformerConfig transformer_config_from_json(const Json& j, const std::string& where) {
  require_keys(j, {"n_enc_layers", "n_dec_layers", "d_model", "n_heads", "d_ff", "context_len", "vocab", "dropout"},
               where);
  TransformerConfig c;
  if (j.contains("n_enc_layers")) c.n_enc_layers = json_count(j, "n_enc_layers", where);
  if (j.contains("n_dec_layers")) c.n_dec_layers = json_count(j, "n_dec_layers", where);
  if (j.contains("d_model")) c.d_model = json_count(j, "d_model", where);
  if (j.contains("n_heads")) c.n_heads = json_count(j, "n_heads", where);
  if (j.contains("d_ff")) c.d_ff = json_count(j, "d_ff", where);
  if (j.contains("context_len")) c.context_len = json_count(j, "context_len", where);
  if (j.contains("vocab")) c.vocab = json_count(j, "vocab", where);
  if (j.contains("dropout")) c.dropout = json_number(j, "dropout", where);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

Tensor positional_encoding(std::size_t length, std::size_t d_model, std::size_t context_len) {
  if (context_len != 0 && length > context_len) {
    throw std::length_error("positional_encoding: length " + std::to_string(length) + " exceeds context " +
                            std::to_string(context_len));
  }
  std::vector<double> v(length * d_model);
  for (std::size_t p = 0; p < length; ++p) {
    for (std::size_t i = 0; i < d_model; i += 2) {
      const double w = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d_model));
      v[p * d_model + i] = std::sin(static_cast<double>(p) * w);
      if (i + 1 < d_model) v[p * d_model + i + 1] = std::cos(static_cast<double>(p) * w);
    }
  }
  return Tensor::from({length, d_model}, std::move(v));
}

AttentionMask AttentionMask::all(std::size_t rows, std::size_t cols) {
  return AttentionMask{rows, cols, std::vector<char>(rows * cols, 1)};
}

AttentionMask AttentionMask::causal(std::size_t rows, std::size_t cols, std::size_t offset) {
  AttentionMask m{rows, cols, std::vector<char>(rows * cols, 0)};
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols && j <= i + offset; ++j) m.allow[i * cols + j] = 1;
  }
  return m;
}

std::vector<double> AttentionMask::additive() const {
  std::vector<double> out(rows * cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < cols; ++j) {
      if (allow[i * cols + j]) {
        any = true;
      } else {
        out[i * cols + j] = -std::numeric_limits<double>::infinity();
      }
    }
    if (!any) throw std::domain_error("attention mask row " + std::to_string(i) + " allows nothing");
  }
  return out;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask* mask) {
  if (q.rank() < 2 || k.rank() != q.rank() || v.rank() != q.rank()) throw ShapeError("attention: rank mismatch");
  if (q.dim(-1) != k.dim(-1) || k.dim(-2) != v.dim(-2)) throw ShapeError("attention: Q/K/V shapes disagree");
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.dim(-1)));
  Tensor scores = scale(matmul(q, transpose(k)), inv);
  if (mask != nullptr) {
    if (mask->rows != q.dim(-2) || mask->cols != k.dim(-2)) throw ShapeError("attention: mask shape mismatch");
    const std::vector<double> add = mask->additive();
    scores = add_constant(scores, add, {mask->rows, mask->cols});
  }
  return matmul(softmax(scores, -1), v);
}

AttentionParams make_attention(std::size_t d_model, RngStream& rng, const std::string& name, ParameterList& params) {
  AttentionParams p;
  p.q = make_linear(d_model, d_model, rng, name + ".q", params);
  p.k = make_linear(d_model, d_model, rng, name + ".k", params);
  p.v = make_linear(d_model, d_model, rng, name + ".v", params);
  p.o = make_linear(d_model, d_model, rng, name + ".o", params);
  return p;
}

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionMask* mask,
                            const AttentionParams& p, std::size_t n_heads) {
  const std::size_t d = x_q.dim(-1);
  if (x_kv.dim(-1) != d || p.q.in != d) throw ShapeError("multi_head_attention: model width mismatch");
  if (n_heads == 0 || d % n_heads != 0) throw ShapeError("multi_head_attention: d_model not divisible by heads");
  const std::size_t dh = d / n_heads;
  const Tensor q = apply(p.q, x_q);
  const Tensor k = apply(p.k, x_kv);
  const Tensor v = apply(p.v, x_kv);
  if (n_heads == 1) return apply(p.o, attention(q, k, v, mask));
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    heads.push_back(attention(slice(q, -1, h * dh, dh), slice(k, -1, h * dh, dh), slice(v, -1, h * dh, dh), mask));
  }
  return apply(p.o, concat(heads, -1));
}

QuantumTransformer::QuantumTransformer(const TransformerConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  RngStream rng(seed, 0x7472616e73ULL);
  const std::size_t d = config_.d_model;
  state_emb_ = make_linear(kStateFeatures, d, rng, "embed.state", params_);
  enc_rec_emb_ = make_linear(1, d, rng, "embed.enc_record", params_);
  dec_rec_emb_ = make_linear(1, d, rng, "embed.dec_record", params_);
  tok_emb_ = make_embedding(config_.vocab, d, rng, "embed.token", params_);
  for (std::size_t i = 0; i < config_.n_enc_layers; ++i) {
    const std::string n = "enc." + std::to_string(i);
    EncoderLayer l;
    l.self_attn = make_attention(d, rng, n + ".self", params_);
    l.ln1 = make_layer_norm(d, n + ".ln1", params_);
    l.ff1 = make_linear(d, config_.d_ff, rng, n + ".ff1", params_);
    l.ff2 = make_linear(config_.d_ff, d, rng, n + ".ff2", params_);
    l.ln2 = make_layer_norm(d, n + ".ln2", params_);
    enc_.push_back(std::move(l));
  }
  for (std::size_t i = 0; i < config_.n_dec_layers; ++i) {
    const std::string n = "dec." + std::to_string(i);
    DecoderLayer l;
    l.self_attn = make_attention(d, rng, n + ".self", params_);
    l.ln1 = make_layer_norm(d, n + ".ln1", params_);
    l.cross_attn = make_attention(d, rng, n + ".cross", params_);
    l.ln2 = make_layer_norm(d, n + ".ln2", params_);
    l.ff1 = make_linear(d, config_.d_ff, rng, n + ".ff1", params_);
    l.ff2 = make_linear(config_.d_ff, d, rng, n + ".ff2", params_);
    l.ln3 = make_layer_norm(d, n + ".ln3", params_);
    dec_.push_back(std::move(l));
  }
  head_ = make_linear(d, config_.vocab, rng, "head", params_);
}

Tensor QuantumTransformer::encode(const Tensor& state, const Tensor& record, const ForwardContext& ctx) const {
  if (state.rank() != 2 || state.dim(1) != kStateFeatures) throw ShapeError("encode: state must be [B, 8]");
  if (record.rank() != 3 || record.dim(2) != 1 || record.dim(0) != state.dim(0)) {
    throw ShapeError("encode: record must be [B, L, 1]");
  }
  const std::size_t b = record.dim(0), len = record.dim(1);
  if (len + 1 > config_.context_len) {
    throw std::length_error("encode: record length " + std::to_string(len) + " exceeds context " +
                            std::to_string(config_.context_len) + " - 1");
  }
  const Tensor prefix = apply(state_emb_, reshape(state, {b, 1, kStateFeatures}));
  Tensor x = prefix;
  if (len > 0) {
    const Tensor pe = slice(positional_encoding(len + 1, config_.d_model), 0, 1, len);
    x = concat({prefix, add(apply(enc_rec_emb_, record), pe)}, 1);
  }
  x = maybe_dropout(x, ctx);
  const AttentionMask mask = AttentionMask::causal(len + 1, len + 1);
  for (const EncoderLayer& l : enc_) {
    x = apply(l.ln1, add(x, maybe_dropout(multi_head_attention(x, x, &mask, l.self_attn, config_.n_heads), ctx)));
    const Tensor f = apply(l.ff2, relu(apply(l.ff1, x)));
    x = apply(l.ln2, add(x, maybe_dropout(f, ctx)));
  }
  return x;
}

Tensor QuantumTransformer::decode(const Tensor& memory, std::span<const std::size_t> tokens, const Tensor& record,
                                  const ForwardContext& ctx) const {
  if (record.rank() != 3 || record.dim(2) != 1) throw ShapeError("decode: record must be [B, L, 1]");
  const std::size_t b = record.dim(0), len = record.dim(1);
  if (tokens.size() != b * len) throw ShapeError("decode: token and record sequences differ in length");
  if (len == 0 || len > config_.context_len) throw std::length_error("decode: length outside [1, context_len]");
  if (memory.rank() != 3 || memory.dim(0) != b || memory.dim(1) != len + 1 || memory.dim(2) != config_.d_model) {
    throw ShapeError("decode: memory must be [B, L + 1, d_model]");
  }
  Tensor x = add(add(embedding(tok_emb_, tokens, {b, len}), apply(dec_rec_emb_, record)),
                 positional_encoding(len, config_.d_model));
  x = maybe_dropout(x, ctx);
  const AttentionMask self_mask = AttentionMask::causal(len, len);
  const AttentionMask cross_mask = AttentionMask::causal(len, len + 1, 1);
  for (const DecoderLayer& l : dec_) {
    x = apply(l.ln1, add(x, maybe_dropout(multi_head_attention(x, x, &self_mask, l.self_attn, config_.n_heads), ctx)));
    x = apply(l.ln2,
              add(x, maybe_dropout(multi_head_attention(x, memory, &cross_mask, l.cross_attn, config_.n_heads), ctx)));
    const Tensor f = apply(l.ff2, relu(apply(l.ff1, x)));
    x = apply(l.ln3, add(x, maybe_dropout(f, ctx)));
  }
  return apply(head_, x);
}

Tensor QuantumTransformer::forward(const Batch& batch, const ForwardContext& ctx) const {
  const Tensor state = Tensor::from({batch.batch_size, kStateFeatures}, batch.state_features);
  const Tensor record = Tensor::from({batch.batch_size, batch.length, 1}, batch.record);
  const Tensor memory = encode(state, record, ctx);
  return decode(memory, batch.decoder_tokens, record, ctx);
}

std::size_t QuantumTransformer::predict_next(std::span<const double> state, std::span<const double> record,
                                             std::span<const std::size_t> previous_tokens) const {
  if (state.size() != kStateFeatures) throw ShapeError("predict_next: state must have 8 features");
  const std::size_t len = record.size();
  if (len == 0 || previous_tokens.size() + 1 != len) {
    throw std::invalid_argument("predict_next: need record length = previous tokens + 1 >= 1");
  }
  NoGradGuard no_grad;
  std::vector<std::size_t> tokens{config_.bos()};
  tokens.insert(tokens.end(), previous_tokens.begin(), previous_tokens.end());
  const Tensor st = Tensor::from({1, kStateFeatures}, {state.begin(), state.end()});
  const Tensor rec = Tensor::from({1, len, 1}, {record.begin(), record.end()});
  const Tensor logits = decode(encode(st, rec), tokens, rec);
  return argmax_lowest(logits.values().data() + (len - 1) * config_.vocab, config_.vocab);
}

TransformerSession::TransformerSession(const QuantumTransformer& model)
    : model_(model),
      pe_(positional_encoding(model.config().context_len, model.config().d_model)),
      enc_cache_(model.config().n_enc_layers),
      dec_self_cache_(model.config().n_dec_layers),
      dec_cross_cache_(model.config().n_dec_layers) {}

void TransformerSession::append_kv(const AttentionParams& p, const Eigen::RowVectorXd& x, Cache& cache) const {
  if (cache.n == cache.k.rows()) {
    const auto cap = static_cast<Eigen::Index>(model_.config().context_len);
    const auto d = static_cast<Eigen::Index>(model_.config().d_model);
    if (cache.n >= cap) throw std::length_error("TransformerSession: context exhausted");
    cache.k.conservativeResize(cap, d);
    cache.v.conservativeResize(cap, d);
  }
  cache.k.row(cache.n) = apply_row(p.k, x);
  cache.v.row(cache.n) = apply_row(p.v, x);
  ++cache.n;
}

Eigen::RowVectorXd TransformerSession::attend(const AttentionParams& p, const Eigen::RowVectorXd& x_q,
                                              Cache& cache) const {
  const auto heads = static_cast<Eigen::Index>(model_.config().n_heads);
  const auto d = static_cast<Eigen::Index>(model_.config().d_model);
  const Eigen::Index dh = d / heads;
  const Eigen::RowVectorXd q = apply_row(p.q, x_q);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  Eigen::RowVectorXd out(d);
  for (Eigen::Index h = 0; h < heads; ++h) {
    const auto kh = cache.k.block(0, h * dh, cache.n, dh);
    const auto vh = cache.v.block(0, h * dh, cache.n, dh);
    Eigen::RowVectorXd s = (q.segment(h * dh, dh) * kh.transpose()) * inv;
    s = (s.array() - s.maxCoeff()).exp();
    s /= s.sum();
    out.segment(h * dh, dh) = s * vh;
  }
  return apply_row(p.o, out);
}

void TransformerSession::encoder_push(const Eigen::RowVectorXd& x0) {
  Eigen::RowVectorXd x = x0;
  const auto& layers = model_.encoder_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    append_kv(layers[l].self_attn, x, enc_cache_[l]);
    x = apply_row(layers[l].ln1, x + attend(layers[l].self_attn, x, enc_cache_[l]));
    const Eigen::RowVectorXd f = apply_row(layers[l].ff2, apply_row(layers[l].ff1, x).cwiseMax(0.0));
    x = apply_row(layers[l].ln2, x + f);
  }
  const auto& dec = model_.decoder_layers();
  for (std::size_t l = 0; l < dec.size(); ++l) append_kv(dec[l].cross_attn, x, dec_cross_cache_[l]);
  ++enc_pos_;
}

void TransformerSession::reset(std::span<const double> state) {
  if (state.size() != kStateFeatures) throw ShapeError("TransformerSession: state must have 8 features");
  for (auto* caches : {&enc_cache_, &dec_self_cache_, &dec_cross_cache_}) {
    for (Cache& c : *caches) c.n = 0;
  }
  enc_pos_ = 0;
  dec_pos_ = 0;
  prev_token_ = model_.config().bos();
  const Eigen::Map<const Eigen::RowVectorXd> s(state.data(), static_cast<Eigen::Index>(state.size()));
  encoder_push(apply_row(model_.state_embedding(), s));
}

std::size_t TransformerSession::step(double record_value) {
  const auto& cfg = model_.config();
  if (enc_pos_ == 0) throw std::logic_error("TransformerSession: reset() not called");
  if (enc_pos_ + 1 > cfg.context_len) throw std::length_error("TransformerSession: context exhausted");
  const auto d = static_cast<Eigen::Index>(cfg.d_model);
  const Eigen::Map<const RowMatrix> pe(pe_.values().data(), static_cast<Eigen::Index>(cfg.context_len), d);
  const Eigen::RowVectorXd r = Eigen::RowVectorXd::Constant(1, record_value);

  encoder_push(apply_row(model_.encoder_record_embedding(), r) + pe.row(static_cast<Eigen::Index>(enc_pos_)));

  const Eigen::Map<const RowMatrix> tok(model_.token_embedding().values().data(),
                                        static_cast<Eigen::Index>(cfg.vocab), d);
  Eigen::RowVectorXd x = tok.row(static_cast<Eigen::Index>(prev_token_)) +
                         apply_row(model_.decoder_record_embedding(), r) +
                         pe.row(static_cast<Eigen::Index>(dec_pos_));
  const auto& layers = model_.decoder_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    append_kv(layers[l].self_attn, x, dec_self_cache_[l]);
    x = apply_row(layers[l].ln1, x + attend(layers[l].self_attn, x, dec_self_cache_[l]));
    x = apply_row(layers[l].ln2, x + attend(layers[l].cross_attn, x, dec_cross_cache_[l]));
    const Eigen::RowVectorXd f = apply_row(layers[l].ff2, apply_row(layers[l].ff1, x).cwiseMax(0.0));
    x = apply_row(layers[l].ln3, x + f);
  }
  logits_ = apply_row(model_.head(), x);
  const std::size_t token = argmax_lowest(logits_.data(), cfg.vocab);
  prev_token_ = token;
  ++dec_pos_;
  return token;
}

}  // namespace qfc
