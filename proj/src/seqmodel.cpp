#include "qfc/seqmodel.hpp"

#include <algorithm>
#include <cmath>

namespace qfc {

namespace {

void score_logits(const Tensor& logits, std::span<const std::size_t> targets, std::size_t vocab, BatchScore& s) {
  const auto& v = logits.values();
  for (std::size_t r = 0; r < targets.size(); ++r) {
    const double* x = v.data() + r * vocab;
    const double mx = *std::max_element(x, x + vocab);
    double z = 0.0;
    for (std::size_t i = 0; i < vocab; ++i) z += std::exp(x[i] - mx);
    s.loss_sum += std::log(z) + mx - x[targets[r]];
    if (argmax_lowest(x, vocab) == targets[r]) ++s.correct;
    ++s.count;
  }
}

class TransformerPolicy : public TokenPolicy {
 public:
  explicit TransformerPolicy(const QuantumTransformer& m) : session_(m) {}
  void reset(std::span<const double> f) override { session_.reset(f); }
  std::size_t step(double r) override { return session_.step(r); }

 private:
  TransformerSession session_;
};

class TransformerModel : public SequenceModel {
 public:
  TransformerModel(const TransformerConfig& c, std::uint64_t seed) : model_(c, seed) {}
  std::string kind() const override { return "transformer"; }
  Json architecture() const override { return to_json(model_.config()); }
  ParameterList& parameters() override { return model_.parameters(); }
  std::size_t vocab() const override { return model_.config().vocab; }
  std::size_t context_len() const override { return model_.config().context_len; }

  double fit_batch(const Batch& batch, const ForwardContext& ctx, const std::function<void()>& update) override {
    ForwardContext c = ctx;
    c.dropout = model_.config().dropout;
    Tensor loss = loss_batch(model_, batch, c);
    loss.backward();
    update();
    return loss.item();
  }

  BatchScore score_batch(const Batch& batch) const override {
    NoGradGuard no_grad;
    BatchScore s;
    score_logits(model_.forward(batch), batch.targets, model_.config().vocab, s);
    return s;
  }

  std::unique_ptr<TokenPolicy> policy() const override { return std::make_unique<TransformerPolicy>(model_); }

 private:
  QuantumTransformer model_;
};

class RecurrentPolicy : public TokenPolicy {
 public:
  explicit RecurrentPolicy(const RecurrentModel& m) : session_(m) {}
  void reset(std::span<const double> f) override { session_.reset(f); }
  std::size_t step(double r) override { return session_.step(r); }

 private:
  RnnSession session_;
};

// Step-major copies of columns [start, start + len) of a B x L array.
template <typename T>
std::vector<T> window(const std::vector<T>& rows, std::size_t b, std::size_t l, std::size_t start, std::size_t len) {
  std::vector<T> out(b * len);
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t i = 0; i < b; ++i) out[t * b + i] = rows[i * l + start + t];
  }
  return out;
}

class RecurrentSequenceModel : public SequenceModel {
 public:
  RecurrentSequenceModel(const RnnConfig& c, std::uint64_t seed) : model_(c, seed) {}
  std::string kind() const override { return to_string(model_.config().cell); }
  Json architecture() const override { return to_json(model_.config()); }
  ParameterList& parameters() override { return model_.parameters(); }
  std::size_t vocab() const override { return model_.config().vocab; }
  std::size_t context_len() const override { return 0; }

  double fit_batch(const Batch& batch, const ForwardContext& ctx, const std::function<void()>& update) override {
    ForwardContext c = ctx;
    c.dropout = model_.config().dropout;
    const std::size_t b = batch.batch_size, l = batch.length, w = model_.config().truncation_len;
    Tensor h = model_.initial_hidden(Tensor::from({b, kStateFeatures}, batch.state_features));
    double total = 0.0;
    for (std::size_t start = 0; start < l; start += w) {
      const std::size_t len = std::min(w, l - start);
      const auto tokens = window(batch.decoder_tokens, b, l, start, len);
      const auto record = window(batch.record, b, l, start, len);
      const auto targets = window(batch.targets, b, l, start, len);
      RecurrentModel::WindowResult res = model_.run_window(tokens, record, b, h, c);
      Tensor loss = cross_entropy(res.logits, targets);
      loss.backward();
      update();
      total += loss.item() * static_cast<double>(len);
      // Carried into the next window as a constant.
      h = Tensor::from(res.hidden.shape(), res.hidden.values());
    }
    return total / static_cast<double>(l);
  }

  BatchScore score_batch(const Batch& batch) const override {
    NoGradGuard no_grad;
    const std::size_t b = batch.batch_size, l = batch.length;
    const Tensor h0 = model_.initial_hidden(Tensor::from({b, kStateFeatures}, batch.state_features));
    const auto res = model_.run_window(window(batch.decoder_tokens, b, l, 0, l), window(batch.record, b, l, 0, l), b, h0);
    BatchScore s;
    score_logits(res.logits, window(batch.targets, b, l, 0, l), model_.config().vocab, s);
    return s;
  }

  std::unique_ptr<TokenPolicy> policy() const override { return std::make_unique<RecurrentPolicy>(model_); }

 private:
  RecurrentModel model_;
};

}  // namespace

std::unique_ptr<SequenceModel> make_transformer_model(const TransformerConfig& config, std::uint64_t seed) {
  return std::make_unique<TransformerModel>(config, seed);
}

std::unique_ptr<SequenceModel> make_recurrent_model(const RnnConfig& config, std::uint64_t seed) {
  return std::make_unique<RecurrentSequenceModel>(config, seed);
}

std::unique_ptr<SequenceModel> model_from_checkpoint(const Checkpoint& ckpt) {
  std::unique_ptr<SequenceModel> m;
  try {
    if (ckpt.kind == "transformer") {
      m = make_transformer_model(transformer_config_from_json(ckpt.architecture, "checkpoint.architecture"), 0);
    } else if (ckpt.kind == "rnn" || ckpt.kind == "gru") {
      RnnConfig c = rnn_config_from_json(ckpt.architecture, "checkpoint.architecture");
      if (to_string(c.cell) != ckpt.kind) throw CheckpointError("checkpoint kind and cell disagree");
      m = make_recurrent_model(c, 0);
    } else {
      throw CheckpointError("unknown checkpoint kind '" + ckpt.kind + "'");
    }
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
  assign_parameters(ckpt, m->parameters());
  return m;
}

Tensor loss_batch(const QuantumTransformer& model, const Batch& batch, const ForwardContext& ctx) {
  const Tensor logits = model.forward(batch, ctx);
  return cross_entropy(reshape(logits, {batch.batch_size * batch.length, model.config().vocab}), batch.targets);
}

}  // namespace qfc
