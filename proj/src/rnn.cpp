#include "qfc/rnn.hpp"

#include <cmath>

namespace qfc {

std::string to_string(CellKind c) { return c == CellKind::kVanilla ? "rnn" : "gru"; }

CellKind cell_kind_from_string(const std::string& s) {
  if (s == "rnn" || s == "vanilla") return CellKind::kVanilla;
  if (s == "gru") return CellKind::kGru;
  throw std::invalid_argument("unknown recurrent cell '" + s + "'");
}

void RnnConfig::validate() const {
  if (hidden_dim == 0 || embed_dim == 0) throw std::invalid_argument("rnn: dims must be positive");
  if (truncation_len == 0) throw std::invalid_argument("rnn: truncation_len must be >= 1");
  if (vocab < 2) throw std::invalid_argument("rnn: vocab must be >= 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("rnn: dropout must be in [0, 1)");
}

Json to_json(const RnnConfig& c) {
  return Json{{"cell", to_string(c.cell)},        {"hidden_dim", c.hidden_dim}, {"embed_dim", c.embed_dim},
              {"truncation_len", c.truncation_len}, {"vocab", c.vocab},         {"dropout", c.dropout}};
}

RnnConfig rnn_config_from_json(const Json& j, const std::string& where) {
  require_keys(j, {"cell", "hidden_dim", "embed_dim", "truncation_len", "vocab", "dropout"}, where);
  RnnConfig c;
  try {
    if (j.contains("cell")) c.cell = cell_kind_from_string(json_string(j, "cell", where));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ".cell: " + e.what());
  }
  if (j.contains("hidden_dim")) c.hidden_dim = json_count(j, "hidden_dim", where);
  if (j.contains("embed_dim")) c.embed_dim = json_count(j, "embed_dim", where);
  if (j.contains("truncation_len")) c.truncation_len = json_count(j, "truncation_len", where);
  if (j.contains("vocab")) c.vocab = json_count(j, "vocab", where);
  if (j.contains("dropout")) c.dropout = json_number(j, "dropout", where);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return c;
}

RecurrentModel::RecurrentModel(const RnnConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  RngStream rng(seed, 0x726e6eULL);
  const std::size_t h = config_.hidden_dim, e = config_.embed_dim;
  state_init_ = make_linear(kStateFeatures, h, rng, "embed.state", params_);
  rec_emb_ = make_linear(1, e, rng, "embed.record", params_);
  tok_emb_ = make_embedding(config_.vocab, e, rng, "embed.token", params_);
  if (config_.cell == CellKind::kVanilla) {
    cell_.wx = make_linear(e, h, rng, "cell.wx", params_);
    cell_.wh = make_linear(h, h, rng, "cell.wh", params_, false);
  } else {
    cell_.wz = make_linear(e, h, rng, "cell.wz", params_);
    cell_.uz = make_linear(h, h, rng, "cell.uz", params_, false);
    cell_.wr = make_linear(e, h, rng, "cell.wr", params_);
    cell_.ur = make_linear(h, h, rng, "cell.ur", params_, false);
    cell_.wn = make_linear(e, h, rng, "cell.wn", params_);
    cell_.un = make_linear(h, h, rng, "cell.un", params_, false);
  }
  head_ = make_linear(h, config_.vocab, rng, "head", params_);
}

Tensor RecurrentModel::cell(const Tensor& x, const Tensor& h) const {
  if (x.rank() != 2 || h.rank() != 2 || x.dim(0) != h.dim(0) || x.dim(1) != config_.embed_dim ||
      h.dim(1) != config_.hidden_dim) {
    throw ShapeError("rnn cell: expected x [B, E] and h [B, H]");
  }
  if (config_.cell == CellKind::kVanilla) {
    return tanh(add(apply(cell_.wx, x), matmul(h, cell_.wh.w)));
  }
  const Tensor z = sigmoid(add(apply(cell_.wz, x), matmul(h, cell_.uz.w)));
  const Tensor r = sigmoid(add(apply(cell_.wr, x), matmul(h, cell_.ur.w)));
  const Tensor n = tanh(add(apply(cell_.wn, x), matmul(mul(r, h), cell_.un.w)));
  return add(mul(affine(z, -1.0, 1.0), h), mul(z, n));
}

Tensor RecurrentModel::initial_hidden(const Tensor& state) const {
  if (state.rank() != 2 || state.dim(1) != kStateFeatures) throw ShapeError("rnn: state must be [B, 8]");
  return tanh(apply(state_init_, state));
}

Tensor RecurrentModel::step_input(std::span<const std::size_t> prev_tokens, std::span<const double> record,
                                  const ForwardContext& ctx) const {
  const std::size_t b = prev_tokens.size();
  if (record.size() != b) throw ShapeError("rnn: token/record batch mismatch");
  const Tensor r = Tensor::from({b, 1}, {record.begin(), record.end()});
  return maybe_dropout(add(embedding(tok_emb_, prev_tokens, {b}), apply(rec_emb_, r)), ctx);
}

Tensor RecurrentModel::logits(const Tensor& h) const { return apply(head_, h); }

RecurrentModel::WindowResult RecurrentModel::run_window(std::span<const std::size_t> tokens,
                                                        std::span<const double> record, std::size_t batch,
                                                        const Tensor& h0, const ForwardContext& ctx) const {
  if (batch == 0 || tokens.size() != record.size() || tokens.size() % batch != 0) {
    throw ShapeError("rnn: window arrays must be len x batch");
  }
  const std::size_t len = tokens.size() / batch;
  Tensor h = h0;
  std::vector<Tensor> outs;
  outs.reserve(len);
  for (std::size_t t = 0; t < len; ++t) {
    h = cell(step_input(tokens.subspan(t * batch, batch), record.subspan(t * batch, batch), ctx), h);
    outs.push_back(logits(h));
  }
  return {concat(outs, 0), h};
}

std::size_t RecurrentModel::predict_next(std::span<const double> state, std::span<const double> record,
                                         std::span<const std::size_t> previous_tokens) const {
  if (state.size() != kStateFeatures) throw ShapeError("rnn predict_next: state must have 8 features");
  if (record.empty() || previous_tokens.size() + 1 != record.size()) {
    throw std::invalid_argument("rnn predict_next: need record length = previous tokens + 1 >= 1");
  }
  NoGradGuard no_grad;
  std::vector<std::size_t> tokens{config_.bos()};
  tokens.insert(tokens.end(), previous_tokens.begin(), previous_tokens.end());
  const Tensor h0 = initial_hidden(Tensor::from({1, kStateFeatures}, {state.begin(), state.end()}));
  const WindowResult w = run_window(tokens, record, 1, h0);
  return argmax_lowest(w.logits.values().data() + (record.size() - 1) * config_.vocab, config_.vocab);
}

namespace {

// Scalar std::exp so the result matches the tensor path bit for bit; Eigen's
// packet exp rounds differently.
Eigen::RowVectorXd sigmoid_row(const Eigen::RowVectorXd& x) {
  return x.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Eigen::RowVectorXd times_w(const Eigen::RowVectorXd& x, const Linear& l) { return apply_row(l, x); }

}  // namespace

void RnnSession::reset(std::span<const double> state) {
  if (state.size() != kStateFeatures) throw ShapeError("RnnSession: state must have 8 features");
  const Eigen::Map<const Eigen::RowVectorXd> s(state.data(), static_cast<Eigen::Index>(state.size()));
  h_ = apply_row(model_.state_init(), s).array().tanh();
  prev_token_ = model_.config().bos();
  ready_ = true;
}

std::size_t RnnSession::step(double record_value) {
  if (!ready_) throw std::logic_error("RnnSession: reset() not called");
  const auto& cfg = model_.config();
  const auto e = static_cast<Eigen::Index>(cfg.embed_dim);
  const Eigen::Map<const RowMatrix> tok(model_.token_embedding().values().data(),
                                        static_cast<Eigen::Index>(cfg.vocab), e);
  const Eigen::RowVectorXd x = tok.row(static_cast<Eigen::Index>(prev_token_)) +
                               apply_row(model_.record_embedding(), Eigen::RowVectorXd::Constant(1, record_value));
  const RnnCellParams& c = model_.cell_params();
  if (cfg.cell == CellKind::kVanilla) {
    h_ = (apply_row(c.wx, x) + times_w(h_, c.wh)).unaryExpr([](double v) { return std::tanh(v); });
  } else {
    const Eigen::RowVectorXd z = sigmoid_row(apply_row(c.wz, x) + times_w(h_, c.uz));
    const Eigen::RowVectorXd r = sigmoid_row(apply_row(c.wr, x) + times_w(h_, c.ur));
    const Eigen::RowVectorXd n =
        (apply_row(c.wn, x) + times_w(r.cwiseProduct(h_), c.un)).unaryExpr([](double v) { return std::tanh(v); });
    h_ = (1.0 - z.array()) * h_.array() + z.array() * n.array();
  }
  const Eigen::RowVectorXd logits = apply_row(model_.head(), h_);
  prev_token_ = argmax_lowest(logits.data(), cfg.vocab);
  return prev_token_;
}

}  // namespace qfc
