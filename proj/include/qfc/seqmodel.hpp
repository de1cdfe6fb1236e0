// seqmodel.hpp: the interface the trainer and the closed loop use for all
// learned controllers.

#pragma once

#include "qfc/checkpoint.hpp"
#include "qfc/dataset.hpp"
#include "qfc/rnn.hpp"
#include "qfc/transformer.hpp"

#include <functional>
#include <memory>
#include <span>
#include <string>

namespace qfc {

// Greedy token stream for one trajectory.
class TokenPolicy {
 public:
  virtual ~TokenPolicy() = default;
  virtual void reset(std::span<const double> state_features) = 0;
  // Consumes the standardized record value r_k, returns the token for lambda_k.
  virtual std::size_t step(double record_value) = 0;
};

struct BatchScore {
  double loss_sum = 0.0;  // summed token cross-entropy
  std::size_t correct = 0;
  std::size_t count = 0;
};

class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  virtual std::string kind() const = 0;
  virtual Json architecture() const = 0;
  virtual ParameterList& parameters() = 0;
  virtual std::size_t vocab() const = 0;
  // Longest sequence the model accepts; 0 means unbounded.
  virtual std::size_t context_len() const = 0;
  // Forward and backward over the batch with `update` called after every
  // backward pass (once, or once per truncation window). Returns the mean
  // token cross-entropy.
  virtual double fit_batch(const Batch& batch, const ForwardContext& ctx, const std::function<void()>& update) = 0;
  // Evaluation mode, no gradients.
  virtual BatchScore score_batch(const Batch& batch) const = 0;
  virtual std::unique_ptr<TokenPolicy> policy() const = 0;
};

std::unique_ptr<SequenceModel> make_transformer_model(const TransformerConfig& config, std::uint64_t seed);
std::unique_ptr<SequenceModel> make_recurrent_model(const RnnConfig& config, std::uint64_t seed);
// Builds the architecture stored in the checkpoint and loads its parameters.
std::unique_ptr<SequenceModel> model_from_checkpoint(const Checkpoint& ckpt);

// Mean token cross-entropy of the transformer on a batch (teacher forcing).
Tensor loss_batch(const QuantumTransformer& model, const Batch& batch, const ForwardContext& ctx = {});

}  // namespace qfc
