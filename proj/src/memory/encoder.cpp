#include "mate/memory/encoder.hpp"

#include "mate/errors.hpp"

#include <cmath>
#include <string>

namespace mate::memory {

using nn::Eval;
using nn::Tape;

Arch parse_arch(std::string_view name) {
  if (name == "mate") return Arch::mate;
  if (name == "rnn") return Arch::rnn;
  if (name == "attn") return Arch::attn;
  if (name == "none") return Arch::none;
  throw ConfigError("memory.arch: unknown architecture '" + std::string(name) + "' (expected mate, rnn, attn, none)");
}

std::string_view to_string(Arch a) {
  switch (a) {
    case Arch::mate: return "mate";
    case Arch::rnn: return "rnn";
    case Arch::attn: return "attn";
    case Arch::none: return "none";
  }
  return "none";
}

MateEncoderKind parse_mate_encoder(std::string_view name) {
  if (name == "residual") return MateEncoderKind::residual;
  if (name == "single_layer") return MateEncoderKind::single_layer;
  throw ConfigError("memory.mate_encoder: unknown kind '" + std::string(name) + "' (expected residual, single_layer)");
}

std::string_view to_string(MateEncoderKind k) {
  return k == MateEncoderKind::residual ? "residual" : "single_layer";
}

void EncoderConfig::validate() const {
  if (arch == Arch::none) return;
  if (input_dim == 0) throw ConfigError("memory: input dimension must be positive");
  if (memory_dim == 0) throw ConfigError("memory.dim must be positive");
  if (horizon == 0) throw ConfigError("memory.horizon must be positive");
}

std::size_t steps_taken(const EncoderState& s) {
  return std::visit([](const auto& st) { return st.t; }, s);
}

Matrix random_unit_offset(std::size_t dim, nn::Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  Matrix v(1, static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(0, i) = dist(rng);
  const double n = v.norm();
  if (n < 1e-12) {
    v.setZero();
    v(0, v.cols() - 1) = 1.0;
    return v;
  }
  return v / n;
}

MemoryEncoder::MemoryEncoder(const EncoderConfig& config, nn::Rng& rng) : config_(config) {
  config_.validate();
  if (config_.arch != Arch::attn) config_.positional = false;
  const std::size_t n = config_.input_dim;
  const std::size_t m = config_.memory_dim;
  const std::size_t h = config_.ff_width();
  switch (config_.arch) {
    case Arch::mate:
      if (config_.mate_encoder == MateEncoderKind::single_layer) {
        ff1_ = nn::Linear("mem/enc", n, m, rng);
      } else {
        embed_ = nn::Linear("embed", n, m, rng);
        embed_offset_ = nn::Parameter("embed/psi", random_unit_offset(m, rng));
        ff1_ = nn::Linear("mem/ff1", m, h, rng);
        ff2_ = nn::Linear("mem/ff2", h, m, rng);
      }
      psi_ = nn::Parameter("psi", random_unit_offset(m, rng));
      break;
    case Arch::rnn:
      embed_ = nn::Linear("embed", n, m, rng);
      embed_offset_ = nn::Parameter("embed/psi", random_unit_offset(m, rng));
      lstm_in_ = nn::Linear("mem/lstm_in", m, 4 * m, rng);
      lstm_rec_ = nn::Parameter("mem/lstm_rec", nn::glorot_uniform(m, 4 * m, rng));
      break;
    case Arch::attn: {
      embed_ = nn::Linear("embed", n, m, rng);
      embed_offset_ = nn::Parameter("embed/psi", random_unit_offset(m, rng));
      if (config_.positional) {
        std::normal_distribution<double> dist(0.0, 0.02);
        Matrix pos(static_cast<Eigen::Index>(config_.horizon), static_cast<Eigen::Index>(m));
        for (Eigen::Index i = 0; i < pos.size(); ++i) pos.data()[i] = dist(rng);
        pos_ = nn::Parameter("mem/pos", std::move(pos));
      }
      ln1_ = nn::LayerNorm("mem/ln1", m);
      wq_ = nn::Linear("mem/wq", m, m, rng);
      wk_ = nn::Linear("mem/wk", m, m, rng);
      wk_.bias = {};  // a key bias shifts every score equally and softmax ignores it
      wv_ = nn::Linear("mem/wv", m, m, rng);
      wo_ = nn::Linear("mem/wo", m, m, rng);
      ln2_ = nn::LayerNorm("mem/ln2", m);
      ff1_ = nn::Linear("mem/ff1", m, h, rng);
      ff2_ = nn::Linear("mem/ff2", h, m, rng);
      ln_out_ = nn::LayerNorm("mem/ln_out", m);
      break;
    }
    case Arch::none:
      break;
  }
}

double MemoryEncoder::readout_scale() const { return std::sqrt(static_cast<double>(config_.memory_dim)); }

nn::ParamList MemoryEncoder::parameters() {
  nn::ParamList out;
  switch (config_.arch) {
    case Arch::mate:
      if (config_.mate_encoder == MateEncoderKind::single_layer) {
        ff1_.collect(out);
      } else {
        embed_.collect(out);
        out.push_back(&embed_offset_);
        ff1_.collect(out);
        ff2_.collect(out);
      }
      out.push_back(&psi_);
      break;
    case Arch::rnn:
      embed_.collect(out);
      out.push_back(&embed_offset_);
      lstm_in_.collect(out);
      out.push_back(&lstm_rec_);
      break;
    case Arch::attn:
      embed_.collect(out);
      out.push_back(&embed_offset_);
      if (config_.positional) out.push_back(&pos_);
      ln1_.collect(out);
      wq_.collect(out);
      out.push_back(&wk_.weight);
      wv_.collect(out);
      wo_.collect(out);
      ln2_.collect(out);
      ff1_.collect(out);
      ff2_.collect(out);
      ln_out_.collect(out);
      break;
    case Arch::none:
      break;
  }
  return out;
}

void MemoryEncoder::check_input(std::size_t width) const {
  if (width != config_.input_dim) {
    throw ConfigError("memory encoder: transition has " + std::to_string(width) + " values, expected " +
                      std::to_string(config_.input_dim));
  }
}

template <typename G>
typename G::Value MemoryEncoder::embed(G& g, typename G::Value xs) const {
  return g.row_normalize(g.add_param_row(embed_(g, xs), embed_offset_), readout_scale());
}

template <typename G>
typename G::Value MemoryEncoder::feed_forward(G& g, typename G::Value h) const {
  return ff2_(g, g.activate(ff1_(g, h), config_.activation));
}

template <typename G>
typename G::Value MemoryEncoder::transition_embeddings(G& g, typename G::Value xs) const {
  if (config_.mate_encoder == MateEncoderKind::single_layer) {
    return g.activate(ff1_(g, xs), config_.activation);
  }
  auto h = embed(g, xs);
  return g.add(h, feed_forward(g, h));
}

template <typename G>
typename G::Value MemoryEncoder::readout_from_embeddings(G& g, typename G::Value embeddings,
                                                         const Segments& seg) const {
  return g.row_normalize(g.add_param_row(g.segment_cumsum(embeddings, seg), psi_), readout_scale());
}

template <typename G>
typename G::Value MemoryEncoder::attn_block(G& g, typename G::Value x, const Segments& seg) const {
  if (config_.positional) {
    std::vector<std::int64_t> positions(seg.total());
    for (std::size_t s = 0; s < seg.count(); ++s) {
      for (std::size_t i = seg.begin(s); i < seg.end(s); ++i) {
        positions[i] = static_cast<std::int64_t>(i - seg.begin(s));
      }
    }
    x = g.add(x, g.param_rows(pos_, positions));
  }
  auto h = ln1_(g, x);
  auto a = g.causal_attention(wq_(g, h), g.matmul(h, g.param(wk_.weight)), wv_(g, h), seg);
  auto x1 = g.add(x, wo_(g, a));
  auto y = g.add(x1, feed_forward(g, ln2_(g, x1)));
  return ln_out_(g, y);
}

template <typename G>
typename G::Value MemoryEncoder::encode_sequence(G& g, const Matrix& xs, const Segments& seg) const {
  if (static_cast<Eigen::Index>(seg.total()) != xs.rows()) {
    throw UsageError("encode_sequence: segments cover " + std::to_string(seg.total()) + " rows, input has " +
                     std::to_string(xs.rows()));
  }
  if (config_.arch == Arch::none) return g.input(Matrix(xs.rows(), 0));
  if (xs.rows() > 0) check_input(static_cast<std::size_t>(xs.cols()));
  if (seg.max_length() > config_.horizon) {
    throw UsageError("encode_sequence: sequence of length " + std::to_string(seg.max_length()) +
                     " exceeds horizon " + std::to_string(config_.horizon));
  }
  if (xs.rows() == 0) return g.input(Matrix(0, static_cast<Eigen::Index>(config_.memory_dim)));
  auto x = g.input(xs);
  switch (config_.arch) {
    case Arch::mate:
      return readout_from_embeddings(g, transition_embeddings(g, x), seg);
    case Arch::rnn:
      return g.lstm_sequence(lstm_in_(g, embed(g, x)), seg, lstm_rec_);
    case Arch::attn:
      return attn_block(g, embed(g, x), seg);
    case Arch::none:
      break;
  }
  return g.input(Matrix(xs.rows(), 0));
}

Matrix MemoryEncoder::encode_sequence(const Matrix& xs) const {
  Eval g;
  return encode_sequence(g, xs, Segments::single(static_cast<std::size_t>(xs.rows())));
}

template <typename G>
typename G::Value MemoryEncoder::initial_readout(G& g) const {
  switch (config_.arch) {
    case Arch::mate:
      return g.row_normalize(g.param(psi_), readout_scale());
    case Arch::rnn:
    case Arch::attn:
      return g.input(Matrix::Zero(1, static_cast<Eigen::Index>(config_.memory_dim)));
    case Arch::none:
      break;
  }
  return g.input(Matrix(1, 0));
}

Vector MemoryEncoder::initial_readout() const {
  Eval g;
  return initial_readout(g).row(0).transpose();
}

EncoderState MemoryEncoder::initial_state() const {
  const auto m = static_cast<Eigen::Index>(config_.memory_dim);
  switch (config_.arch) {
    case Arch::mate:
      return MateState{Vector::Zero(m), 0};
    case Arch::rnn:
      return RnnState{Vector::Zero(m), Vector::Zero(m), 0};
    case Arch::attn: {
      const auto T = static_cast<Eigen::Index>(config_.horizon);
      return AttnCache{Matrix::Zero(T, m), Matrix::Zero(T, m), 0};
    }
    case Arch::none:
      break;
  }
  return EmptyState{};
}

Vector MemoryEncoder::mate_embedding(std::span<const double> x) const {
  if (config_.arch != Arch::mate) throw UsageError("mate_embedding on a non-MATE encoder");
  check_input(x.size());
  Eval g;
  Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  return transition_embeddings(g, row).row(0).transpose();
}

Vector MemoryEncoder::encode_step(EncoderState& state, std::span<const double> x) const {
  const std::size_t t = steps_taken(state);
  if (config_.arch != Arch::none && t >= config_.horizon) {
    throw UsageError("encode_step: horizon " + std::to_string(config_.horizon) + " already reached");
  }
  if (config_.arch == Arch::none) {
    std::get<EmptyState>(state).t += 1;
    return Vector(0);
  }
  check_input(x.size());
  Eval g;
  const Matrix row = Eigen::Map<const Matrix>(x.data(), 1, static_cast<Eigen::Index>(x.size()));
  const double scale = readout_scale();
  const auto m = static_cast<Eigen::Index>(config_.memory_dim);

  switch (config_.arch) {
    case Arch::mate: {
      auto& s = std::get<MateState>(state);
      const Matrix e = transition_embeddings(g, row);
      s.raw_sum += e.row(0).transpose();
      s.t += 1;
      const Matrix sum_row = s.raw_sum.transpose();
      return g.row_normalize(g.add_param_row(sum_row, psi_), scale).row(0).transpose();
    }
    case Arch::rnn: {
      auto& s = std::get<RnnState>(state);
      Matrix pre = lstm_in_(g, embed(g, row));
      pre.noalias() += s.hidden.transpose() * lstm_rec_.value;
      const auto sig = [](const auto& v) { return (1.0 / (1.0 + (-v.array()).exp())).matrix(); };
      const Matrix i = sig(pre.leftCols(m));
      const Matrix f = sig(pre.middleCols(m, m));
      const Matrix gg = pre.middleCols(2 * m, m).array().tanh();
      const Matrix o = sig(pre.rightCols(m));
      const Matrix c = f.cwiseProduct(s.cell.transpose()) + i.cwiseProduct(gg);
      const Matrix h = o.cwiseProduct(Matrix(c.array().tanh()));
      s.cell = c.row(0).transpose();
      s.hidden = h.row(0).transpose();
      s.t += 1;
      return s.hidden;
    }
    case Arch::attn: {
      auto& s = std::get<AttnCache>(state);
      Matrix x0 = embed(g, row);
      if (config_.positional) x0 += pos_.value.row(static_cast<Eigen::Index>(s.t));
      const Matrix h = ln1_(g, x0);
      const auto p = static_cast<Eigen::Index>(s.t);
      s.keys.row(p) = (h * wk_.weight.value).row(0);
      s.values.row(p) = wv_(g, h).row(0);
      const Matrix q = wq_(g, h);
      const double inv = 1.0 / std::sqrt(static_cast<double>(m));
      Vector w = (s.keys.topRows(p + 1) * q.row(0).transpose()) * inv;
      w.array() -= w.maxCoeff();
      w = w.array().exp();
      w /= w.sum();
      const Matrix a = w.transpose() * s.values.topRows(p + 1);
      const Matrix x1 = x0 + wo_(g, a);
      const Matrix y = x1 + feed_forward(g, ln2_(g, x1));
      s.t += 1;
      return ln_out_(g, y).row(0).transpose();
    }
    case Arch::none:
      break;
  }
  return Vector(0);
}

template Eval::Value MemoryEncoder::encode_sequence<Eval>(Eval&, const Matrix&, const Segments&) const;
template Tape::Value MemoryEncoder::encode_sequence<Tape>(Tape&, const Matrix&, const Segments&) const;
template Eval::Value MemoryEncoder::initial_readout<Eval>(Eval&) const;
template Tape::Value MemoryEncoder::initial_readout<Tape>(Tape&) const;
template Eval::Value MemoryEncoder::transition_embeddings<Eval>(Eval&, Eval::Value) const;
template Tape::Value MemoryEncoder::transition_embeddings<Tape>(Tape&, Tape::Value) const;
template Eval::Value MemoryEncoder::readout_from_embeddings<Eval>(Eval&, Eval::Value, const Segments&) const;
template Tape::Value MemoryEncoder::readout_from_embeddings<Tape>(Tape&, Tape::Value, const Segments&) const;

}  // namespace mate::memory
