#pragma once

#include "mate/nn/graph.hpp"
#include "mate/nn/layers.hpp"
#include "mate/nn/tensor.hpp"

#include <span>
#include <string_view>
#include <variant>

namespace mate::memory {

using nn::Matrix;
using nn::Vector;
using nn::Segments;

enum class Arch { mate, rnn, attn, none };

Arch parse_arch(std::string_view name);
std::string_view to_string(Arch a);

// residual: linear embedding -> hypersphere projection -> residual feed-forward block.
// single_layer: E(x) = f(Ax + b), no embedding (the injectivity-probe form).
enum class MateEncoderKind { residual, single_layer };

MateEncoderKind parse_mate_encoder(std::string_view name);
std::string_view to_string(MateEncoderKind k);

struct EncoderConfig {
  Arch arch = Arch::mate;
  std::size_t input_dim = 0;
  std::size_t memory_dim = 128;
  std::size_t horizon = 0;
  nn::Activation activation = nn::Activation::tanh;
  bool positional = true;  // attn only
  MateEncoderKind mate_encoder = MateEncoderKind::residual;
  std::size_t ff_hidden = 0;  // 0 means memory_dim

  void validate() const;
  std::size_t ff_width() const { return ff_hidden ? ff_hidden : memory_dim; }
  bool operator==(const EncoderConfig&) const = default;
};

struct MateState {
  Vector raw_sum;
  std::size_t t = 0;
};

struct RnnState {
  Vector hidden;
  Vector cell;
  std::size_t t = 0;
};

struct AttnCache {
  Matrix keys;    // horizon x m, first t rows valid
  Matrix values;  // horizon x m
  std::size_t t = 0;
};

struct EmptyState {
  std::size_t t = 0;
};

using EncoderState = std::variant<MateState, RnnState, AttnCache, EmptyState>;

std::size_t steps_taken(const EncoderState& s);

// One memory network behind a common interface. Incremental rollout goes through
// encode_step; training encodes whole packed episodes with encode_sequence.
class MemoryEncoder {
 public:
  MemoryEncoder() = default;
  MemoryEncoder(const EncoderConfig& config, nn::Rng& rng);

  const EncoderConfig& config() const { return config_; }
  std::size_t readout_dim() const { return config_.arch == Arch::none ? 0 : config_.memory_dim; }
  double readout_scale() const;

  EncoderState initial_state() const;
  // Readout before any transition has been seen (t = 0).
  Vector initial_readout() const;
  // Advances the state by one transition and returns the new readout.
  // UsageError once t reaches the horizon; ConfigError on a wrong input width.
  Vector encode_step(EncoderState& state, std::span<const double> x) const;

  // Readouts for every row of `xs` (rows packed per episode by `seg`).
  template <typename G>
  typename G::Value encode_sequence(G& g, const Matrix& xs, const Segments& seg) const;
  Matrix encode_sequence(const Matrix& xs) const;

  template <typename G>
  typename G::Value initial_readout(G& g) const;

  // MATE pieces, exposed for position-parallel evaluation and probes.
  template <typename G>
  typename G::Value transition_embeddings(G& g, typename G::Value xs) const;
  template <typename G>
  typename G::Value readout_from_embeddings(G& g, typename G::Value embeddings, const Segments& seg) const;
  Vector mate_embedding(std::span<const double> x) const;

  nn::Parameter& psi() { return psi_; }
  const nn::Parameter& psi() const { return psi_; }
  nn::Linear& embedding() { return embed_; }
  nn::Linear& mate_first() { return ff1_; }

  nn::ParamList parameters();

 private:
  template <typename G>
  typename G::Value embed(G& g, typename G::Value xs) const;
  template <typename G>
  typename G::Value feed_forward(G& g, typename G::Value h) const;
  template <typename G>
  typename G::Value attn_block(G& g, typename G::Value xs, const Segments& seg) const;
  void check_input(std::size_t width) const;

  EncoderConfig config_;
  nn::Linear embed_;
  nn::Parameter embed_offset_;
  nn::Parameter psi_;
  // Feed-forward (MATE residual block, attention block).
  nn::Linear ff1_;
  nn::Linear ff2_;
  // LSTM.
  nn::Linear lstm_in_;
  nn::Parameter lstm_rec_;
  // Attention.
  nn::Parameter pos_;
  nn::LayerNorm ln1_;
  nn::LayerNorm ln2_;
  nn::LayerNorm ln_out_;
  nn::Linear wq_;
  nn::Linear wk_;
  nn::Linear wv_;
  nn::Linear wo_;
};

// Trainable offset initialisation: N(0, 1/m) per coordinate, rescaled to unit norm.
Matrix random_unit_offset(std::size_t dim, nn::Rng& rng);

}  // namespace mate::memory
