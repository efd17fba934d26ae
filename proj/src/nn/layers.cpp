#include "mate/nn/layers.hpp"

namespace mate::nn {

Linear::Linear(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng)
    : weight(prefix + "/w", glorot_uniform(in, out, rng)),
      bias(prefix + "/b", Matrix::Zero(1, static_cast<Eigen::Index>(out))) {}

LayerNorm::LayerNorm(const std::string& prefix, std::size_t dim)
    : gain(prefix + "/g", Matrix::Ones(1, static_cast<Eigen::Index>(dim))),
      bias(prefix + "/b", Matrix::Zero(1, static_cast<Eigen::Index>(dim))) {}

Mlp::Mlp(const std::string& prefix, const std::vector<std::size_t>& dims, const std::vector<Activation>& activations,
         Rng& rng)
    : activations_(activations) {
  if (dims.size() < 2) throw ConfigError(prefix + ": an MLP needs at least input and output dims");
  if (activations.size() != dims.size() - 1) {
    throw ConfigError(prefix + ": need one activation per layer (" + std::to_string(dims.size() - 1) + ")");
  }
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i] == 0 || dims[i + 1] == 0) throw ConfigError(prefix + ": zero layer width");
    layers_.emplace_back(prefix + "/l" + std::to_string(i), dims[i], dims[i + 1], rng);
  }
}

Mlp Mlp::with_hidden(const std::string& prefix, std::size_t in, const std::vector<std::size_t>& hidden,
                     std::size_t out, Activation hidden_act, Activation output, Rng& rng) {
  std::vector<std::size_t> dims{in};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  std::vector<Activation> acts(hidden.size(), hidden_act);
  acts.push_back(output);
  return Mlp(prefix, dims, acts, rng);
}

Matrix mlp_forward(const Mlp& mlp, const Matrix& input) {
  Eval g;
  return mlp.forward(g, input);
}

}  // namespace mate::nn
