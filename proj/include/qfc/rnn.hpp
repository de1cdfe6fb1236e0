// rnn.hpp: vanilla RNN and GRU baselines.
//
// Step input is token(lambda_{k-1}, BOS at k = 0) + linear(r_k), the same
// featurization as the transformer decoder. The initial hidden state is
// tanh(W_s s + b_s) from the initial-state features s. GRU:
//   z = sigmoid(x Wz + h Uz + bz), r = sigmoid(x Wr + h Ur + br),
//   n = tanh(x Wn + (r * h) Un + bn), h' = (1 - z) * h + z * n.

#pragma once

#include "qfc/dataset.hpp"
#include "qfc/nn.hpp"
#include "qfc/serialize.hpp"

#include <cstddef>
#include <span>

namespace qfc {

enum class CellKind { kVanilla, kGru };
std::string to_string(CellKind c);
CellKind cell_kind_from_string(const std::string& s);

struct RnnConfig {
  CellKind cell = CellKind::kGru;
  std::size_t hidden_dim = 64;
  std::size_t embed_dim = 64;
  std::size_t truncation_len = 60;
  std::size_t vocab = 65;
  double dropout = 0.1;

  void validate() const;
  std::size_t bos() const { return vocab - 1; }
};

Json to_json(const RnnConfig& c);
RnnConfig rnn_config_from_json(const Json& j, const std::string& where = "rnn");

struct RnnCellParams {
  // vanilla uses wx and wh; the h-side maps carry no bias
  Linear wx, wh;
  Linear wz, uz, wr, ur, wn, un;
};

class RecurrentModel {
 public:
  RecurrentModel(const RnnConfig& config, std::uint64_t seed);

  const RnnConfig& config() const { return config_; }
  ParameterList& parameters() { return params_; }
  const ParameterList& parameters() const { return params_; }

  // x [B, E], h [B, H] -> [B, H].
  Tensor cell(const Tensor& x, const Tensor& h) const;
  // state [B, 8] -> [B, H].
  Tensor initial_hidden(const Tensor& state) const;
  // Inputs for one step of B sequences.
  Tensor step_input(std::span<const std::size_t> prev_tokens, std::span<const double> record,
                    const ForwardContext& ctx = {}) const;
  Tensor logits(const Tensor& h) const;

  struct WindowResult {
    Tensor logits;  // [B * len, vocab], position-major within each step
    Tensor hidden;  // hidden state after the window
  };
  // Runs `len` steps. tokens/record hold exactly the window, step-major:
  // entry [t * B + b]. Nothing outside the window is reachable.
  WindowResult run_window(std::span<const std::size_t> tokens, std::span<const double> record, std::size_t batch,
                          const Tensor& h0, const ForwardContext& ctx = {}) const;

  std::size_t predict_next(std::span<const double> state, std::span<const double> record,
                           std::span<const std::size_t> previous_tokens) const;

  const Linear& state_init() const { return state_init_; }
  const Linear& record_embedding() const { return rec_emb_; }
  const Tensor& token_embedding() const { return tok_emb_; }
  const RnnCellParams& cell_params() const { return cell_; }
  const Linear& head() const { return head_; }

 private:
  RnnConfig config_;
  ParameterList params_;
  Linear state_init_, rec_emb_;
  Tensor tok_emb_;
  RnnCellParams cell_;
  Linear head_;
};

// Incremental greedy inference; the hidden state is carried over the whole
// rollout.
class RnnSession {
 public:
  explicit RnnSession(const RecurrentModel& model) : model_(model) {}
  void reset(std::span<const double> state);
  std::size_t step(double record_value);
  const Eigen::RowVectorXd& hidden() const { return h_; }

 private:
  const RecurrentModel& model_;
  Eigen::RowVectorXd h_;
  std::size_t prev_token_ = 0;
  bool ready_ = false;
};

}  // namespace qfc
