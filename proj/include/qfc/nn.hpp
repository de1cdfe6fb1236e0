// nn.hpp: parameter blocks shared by the sequence models.

#pragma once

#include "qfc/checkpoint.hpp"
#include "qfc/rng.hpp"
#include "qfc/tensor.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <string>

namespace qfc {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// y = x W + b with W: [in, out].
struct Linear {
  Tensor w;
  Tensor b;
  std::size_t in = 0;
  std::size_t out = 0;
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

// Uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)), zero bias. Without a
// bias, `b` is left undefined.
Linear make_linear(std::size_t in, std::size_t out, RngStream& rng, const std::string& name, ParameterList& params,
                   bool with_bias = true);
LayerNormParams make_layer_norm(std::size_t n, const std::string& name, ParameterList& params);
// Normal(0, 0.02).
Tensor make_embedding(std::size_t vocab, std::size_t dim, RngStream& rng, const std::string& name,
                      ParameterList& params);

Tensor apply(const Linear& l, const Tensor& x);
Tensor apply(const LayerNormParams& ln, const Tensor& x);

// Dropout and the stream it draws from; rng may be null when not training.
struct ForwardContext {
  bool training = false;
  double dropout = 0.0;
  RngStream* rng = nullptr;
};
Tensor maybe_dropout(const Tensor& x, const ForwardContext& ctx);

// Views for no-grad inference.
Eigen::Map<const RowMatrix> weight_view(const Linear& l);
Eigen::Map<const Eigen::RowVectorXd> bias_view(const Linear& l);
Eigen::RowVectorXd apply_row(const Linear& l, const Eigen::Ref<const Eigen::RowVectorXd>& x);
Eigen::RowVectorXd apply_row(const LayerNormParams& ln, const Eigen::Ref<const Eigen::RowVectorXd>& x,
                             double eps = 1e-5);

// Lowest index among the maxima.
std::size_t argmax_lowest(const double* x, std::size_t n);

}  // namespace qfc
