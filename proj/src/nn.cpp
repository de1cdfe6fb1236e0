#include "qfc/nn.hpp"

#include <cmath>

namespace qfc {

Linear make_linear(std::size_t in, std::size_t out, RngStream& rng, const std::string& name, ParameterList& params,
                   bool with_bias) {
  const double a = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> w(in * out);
  for (double& x : w) x = (2.0 * rng.uniform() - 1.0) * a;
  Linear l;
  l.in = in;
  l.out = out;
  l.w = Tensor::from({in, out}, std::move(w), true);
  params.push_back({name + ".w", l.w});
  if (with_bias) {
    l.b = Tensor::zeros({out}, true);
    params.push_back({name + ".b", l.b});
  }
  return l;
}

LayerNormParams make_layer_norm(std::size_t n, const std::string& name, ParameterList& params) {
  LayerNormParams ln{Tensor::full({n}, 1.0, true), Tensor::zeros({n}, true)};
  params.push_back({name + ".gain", ln.gain});
  params.push_back({name + ".bias", ln.bias});
  return ln;
}

Tensor make_embedding(std::size_t vocab, std::size_t dim, RngStream& rng, const std::string& name,
                      ParameterList& params) {
  std::vector<double> v(vocab * dim);
  for (double& x : v) x = 0.02 * rng.normal();
  Tensor t = Tensor::from({vocab, dim}, std::move(v), true);
  params.push_back({name, t});
  return t;
}

Tensor apply(const Linear& l, const Tensor& x) {
  const Tensor y = matmul(x, l.w);
  return l.b.defined() ? add(y, l.b) : y;
}

Tensor apply(const LayerNormParams& ln, const Tensor& x) { return layer_norm(x, ln.gain, ln.bias); }

Tensor maybe_dropout(const Tensor& x, const ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout == 0.0) return x;
  if (ctx.rng == nullptr) throw std::logic_error("dropout in training mode needs an RNG stream");
  return dropout(x, ctx.dropout, *ctx.rng, true);
}

Eigen::Map<const RowMatrix> weight_view(const Linear& l) {
  return {l.w.values().data(), static_cast<Eigen::Index>(l.in), static_cast<Eigen::Index>(l.out)};
}

Eigen::Map<const Eigen::RowVectorXd> bias_view(const Linear& l) {
  return {l.b.values().data(), static_cast<Eigen::Index>(l.out)};
}

Eigen::RowVectorXd apply_row(const Linear& l, const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  if (!l.b.defined()) return x * weight_view(l);
  return x * weight_view(l) + bias_view(l);
}

Eigen::RowVectorXd apply_row(const LayerNormParams& ln, const Eigen::Ref<const Eigen::RowVectorXd>& x, double eps) {
  const auto n = x.size();
  const double mu = x.mean();
  const Eigen::RowVectorXd c = x.array() - mu;
  const double var = c.squaredNorm() / static_cast<double>(n);
  const Eigen::Map<const Eigen::RowVectorXd> g(ln.gain.values().data(), n);
  const Eigen::Map<const Eigen::RowVectorXd> b(ln.bias.values().data(), n);
  return (c / std::sqrt(var + eps)).cwiseProduct(g) + b;
}

std::size_t argmax_lowest(const double* x, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (x[i] > x[best]) best = i;
  }
  return best;
}

}  // namespace qfc
