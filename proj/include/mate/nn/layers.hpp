#pragma once

#include "mate/errors.hpp"
#include "mate/nn/graph.hpp"
#include "mate/nn/tensor.hpp"

#include <string>
#include <vector>

namespace mate::nn {

struct Linear {
  Parameter weight;  // in x out
  Parameter bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.value.rows()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.value.cols()); }

  template <typename G>
  typename G::Value operator()(G& g, const typename G::Value& x) const {
    return g.linear(x, weight, bias);
  }

  void collect(ParamList& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

struct LayerNorm {
  Parameter gain;
  Parameter bias;

  LayerNorm() = default;
  LayerNorm(const std::string& prefix, std::size_t dim);

  template <typename G>
  typename G::Value operator()(G& g, const typename G::Value& x) const {
    return g.layer_norm(x, gain, bias);
  }

  void collect(ParamList& out) {
    out.push_back(&gain);
    out.push_back(&bias);
  }
};

// Dense stack: layer i maps dims[i] -> dims[i+1] followed by activations[i].
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& prefix, const std::vector<std::size_t>& dims, const std::vector<Activation>& activations,
      Rng& rng);
  // Hidden layers share one activation, the last layer gets `output`.
  static Mlp with_hidden(const std::string& prefix, std::size_t in, const std::vector<std::size_t>& hidden,
                         std::size_t out, Activation hidden_act, Activation output, Rng& rng);

  std::size_t in_dim() const { return layers_.front().in_dim(); }
  std::size_t out_dim() const { return layers_.back().out_dim(); }
  std::size_t depth() const { return layers_.size(); }
  Linear& layer(std::size_t i) { return layers_.at(i); }
  const Linear& layer(std::size_t i) const { return layers_.at(i); }
  Activation activation(std::size_t i) const { return activations_.at(i); }

  template <typename G>
  typename G::Value forward(G& g, typename G::Value x) const {
    if (static_cast<std::size_t>(g.value(x).cols()) != in_dim()) {
      throw ConfigError(layers_.front().weight.name + ": input has " + std::to_string(g.value(x).cols()) +
                        " columns, layer expects " + std::to_string(in_dim()));
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      x = g.activate(layers_[i](g, x), activations_[i]);
      if (!g.value(x).allFinite()) {
        throw NumericError("non-finite output at layer " + std::to_string(i) + " (" + layers_[i].weight.name + ")");
      }
    }
    return x;
  }

  void collect(ParamList& out) {
    for (auto& l : layers_) l.collect(out);
  }

 private:
  std::vector<Linear> layers_;
  std::vector<Activation> activations_;
};

// Inference-only forward in 64-bit.
Matrix mlp_forward(const Mlp& mlp, const Matrix& input);

}  // namespace mate::nn
