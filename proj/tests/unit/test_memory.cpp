#include "mate/errors.hpp"
#include "mate/memory/analytic.hpp"
#include "mate/memory/encoder.hpp"
#include "mate/memory/parallel.hpp"
#include "mate/nn/optim.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace mate;
using namespace mate::memory;
using nn::Matrix;
using nn::Rng;
using nn::Vector;

namespace {

Matrix uniform_rows(Eigen::Index r, Eigen::Index c, Rng& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

EncoderConfig config_for(Arch arch, std::size_t n = 5, std::size_t m = 8, std::size_t T = 64) {
  EncoderConfig c;
  c.arch = arch;
  c.input_dim = n;
  c.memory_dim = m;
  c.horizon = T;
  return c;
}

Matrix step_all(const MemoryEncoder& enc, const Matrix& xs) {
  auto state = enc.initial_state();
  Matrix out(xs.rows(), static_cast<Eigen::Index>(enc.readout_dim()));
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    out.row(i) = enc.encode_step(state, std::span<const double>(xs.row(i).data(), xs.cols())).transpose();
  }
  return out;
}

double max_rel(const Matrix& a, const Matrix& b) {
  const double scale = std::max(a.cwiseAbs().maxCoeff(), 1e-300);
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

Matrix permute_rows(const Matrix& xs, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(xs.rows()));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  Matrix out(xs.rows(), xs.cols());
  for (Eigen::Index i = 0; i < xs.rows(); ++i) out.row(i) = xs.row(idx[i]);
  return out;
}

std::span<const double> row_span(const Matrix& xs, Eigen::Index i) {
  return {xs.row(i).data(), static_cast<std::size_t>(xs.cols())};
}

}  // namespace

TEST(EncodeStep, MateFirstStepIsNormalizedSingleEmbedding) {
  Rng rng(1);
  MemoryEncoder enc(config_for(Arch::mate), rng);
  const Matrix x = uniform_rows(1, 5, rng);
  auto state = enc.initial_state();
  const Vector readout = enc.encode_step(state, row_span(x, 0));
  const Vector e = enc.mate_embedding(row_span(x, 0));
  const auto& st = std::get<MateState>(state);
  EXPECT_EQ(st.t, 1u);
  EXPECT_LE((st.raw_sum - e).cwiseAbs().maxCoeff(), 0.0);
  const Vector shifted = e + enc.psi().value.row(0).transpose();
  const Vector expected = std::sqrt(8.0) * shifted / shifted.norm();
  EXPECT_LE((readout - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(EncodeStep, MateRepeatedTransitionChangesReadout) {
  Rng rng(2);
  MemoryEncoder enc(config_for(Arch::mate), rng);
  const Matrix x = uniform_rows(1, 5, rng);
  auto once = enc.initial_state();
  const Vector r1 = enc.encode_step(once, row_span(x, 0));
  auto twice = enc.initial_state();
  enc.encode_step(twice, row_span(x, 0));
  const Vector r2 = enc.encode_step(twice, row_span(x, 0));
  const Vector e = enc.mate_embedding(row_span(x, 0));
  EXPECT_LE((std::get<MateState>(twice).raw_sum - 2.0 * e).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_GT((r1 - r2).norm(), 1e-6);
}

TEST(EncodeStep, ZeroWeightLstmStaysAtZero) {
  Rng rng(3);
  MemoryEncoder enc(config_for(Arch::rnn), rng);
  for (auto* p : enc.parameters()) {
    if (p->name.rfind("mem/", 0) == 0) p->value.setZero();
  }
  const Matrix xs = uniform_rows(10, 5, rng) * 10.0;
  const Matrix out = step_all(enc, xs);
  EXPECT_EQ(out.cwiseAbs().maxCoeff(), 0.0);
}

TEST(EncodeStep, OverflowAndWidthErrors) {
  Rng rng(4);
  for (Arch a : {Arch::mate, Arch::rnn, Arch::attn}) {
    MemoryEncoder enc(config_for(a, 5, 8, 3), rng);
    const Matrix xs = uniform_rows(4, 5, rng);
    auto state = enc.initial_state();
    for (int i = 0; i < 3; ++i) enc.encode_step(state, row_span(xs, i));
    EXPECT_THROW(enc.encode_step(state, row_span(xs, 3)), UsageError);
    auto fresh = enc.initial_state();
    const Matrix wrong = uniform_rows(1, 4, rng);
    EXPECT_THROW(enc.encode_step(fresh, row_span(wrong, 0)), ConfigError);
  }
}

TEST(EncodeStep, AttnCacheGrowsWithSteps) {
  Rng rng(5);
  MemoryEncoder enc(config_for(Arch::attn, 5, 8, 16), rng);
  const Matrix xs = uniform_rows(6, 5, rng);
  auto state = enc.initial_state();
  for (int i = 0; i < 6; ++i) enc.encode_step(state, row_span(xs, i));
  EXPECT_EQ(steps_taken(state), 6u);
  EXPECT_EQ(std::get<AttnCache>(state).keys.rows(), 16);
}

TEST(EncodeSequence, EmptySequenceIsEmpty) {
  Rng rng(6);
  for (Arch a : {Arch::mate, Arch::rnn, Arch::attn}) {
    MemoryEncoder enc(config_for(a), rng);
    EXPECT_EQ(enc.encode_sequence(Matrix(0, 5)).rows(), 0);
  }
}

TEST(EncodeSequence, LongerThanHorizonIsUsageError) {
  Rng rng(7);
  MemoryEncoder enc(config_for(Arch::mate, 5, 8, 4), rng);
  EXPECT_THROW(enc.encode_sequence(uniform_rows(5, 5, rng)), UsageError);
}

TEST(EncodeSequence, MatchesIteratedStepsAllArchitectures) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    for (Arch a : {Arch::mate, Arch::rnn, Arch::attn}) {
      auto cfg = config_for(a, 5, 8, 40);
      cfg.activation = trial % 2 ? nn::Activation::gelu : nn::Activation::tanh;
      MemoryEncoder enc(cfg, rng);
      const Eigen::Index len = 1 + trial * 2;
      const Matrix xs = uniform_rows(len, 5, rng);
      const Matrix seq = enc.encode_sequence(xs);
      const Matrix steps = step_all(enc, xs);
      EXPECT_LE(max_rel(seq, steps), 1e-10) << to_string(a) << " len " << len;
    }
  }
}

TEST(EncodeSequence, PackedEpisodesMatchSeparateEncoding) {
  Rng rng(9);
  for (Arch a : {Arch::mate, Arch::rnn, Arch::attn}) {
    MemoryEncoder enc(config_for(a), rng);
    const std::vector<std::size_t> lengths{3, 1, 7};
    const Matrix xs = uniform_rows(11, 5, rng);
    nn::Eval g;
    const Matrix packed = enc.encode_sequence(g, xs, nn::Segments::from_lengths(lengths));
    Eigen::Index off = 0;
    for (auto len : lengths) {
      const auto l = static_cast<Eigen::Index>(len);
      const Matrix solo = enc.encode_sequence(Matrix(xs.middleRows(off, l)));
      EXPECT_LE(max_rel(packed.middleRows(off, l), solo), 1e-12) << to_string(a);
      off += l;
    }
  }
}

TEST(EncodeSequence, HandChosenEncoderGivesNormalizedPrefixSums) {
  Rng rng(10);
  auto cfg = config_for(Arch::mate, 3, 3, 8);
  cfg.mate_encoder = MateEncoderKind::single_layer;
  cfg.activation = nn::Activation::identity;
  MemoryEncoder enc(cfg, rng);
  enc.mate_first().weight.value = Matrix::Identity(3, 3);
  enc.mate_first().bias.value.setZero();
  const Matrix xs = uniform_rows(3, 3, rng);
  const Matrix out = enc.encode_sequence(xs);
  Vector running = Vector::Zero(3);
  for (int t = 0; t < 3; ++t) {
    running += xs.row(t).transpose();
    const Vector shifted = running + enc.psi().value.row(0).transpose();
    const Vector expected = std::sqrt(3.0) * shifted / shifted.norm();
    EXPECT_LE((out.row(t).transpose() - expected).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(PermutationInvariance, MateFinalReadoutIgnoresOrder) {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    MemoryEncoder enc(config_for(Arch::mate), rng);
    const Eigen::Index len = 2 + trial % 63;
    const Matrix xs = uniform_rows(len, 5, rng);
    const Matrix perm = permute_rows(xs, rng);
    auto s1 = enc.initial_state();
    auto s2 = enc.initial_state();
    Vector r1, r2;
    for (Eigen::Index i = 0; i < len; ++i) {
      r1 = enc.encode_step(s1, row_span(xs, i));
      r2 = enc.encode_step(s2, row_span(perm, i));
    }
    const Vector& m1 = std::get<MateState>(s1).raw_sum;
    const Vector& m2 = std::get<MateState>(s2).raw_sum;
    EXPECT_LE((m1 - m2).norm() / m1.norm(), 1e-12);
    EXPECT_LE((r1 - r2).norm() / r1.norm(), 1e-12);
  }
}

TEST(PermutationInvariance, BaselinesAreOrderSensitive) {
  Rng rng(12);
  for (Arch a : {Arch::rnn, Arch::attn}) {
    int violations = 0;
    for (int trial = 0; trial < 50; ++trial) {
      MemoryEncoder enc(config_for(a), rng);
      const Matrix xs = uniform_rows(2 + trial % 30, 5, rng);
      Matrix perm = xs;
      perm.row(0).swap(perm.row(perm.rows() - 1));
      const Vector f1 = enc.encode_sequence(xs).bottomRows(1).transpose();
      const Vector f2 = enc.encode_sequence(perm).bottomRows(1).transpose();
      if ((f1 - f2).norm() / f1.norm() > 1e-6) ++violations;
    }
    EXPECT_EQ(violations, 50) << to_string(a);
  }
}

TEST(MateReadout, NormIsSqrtDim) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t m = 4 + 7 * trial;
    MemoryEncoder enc(config_for(Arch::mate, 5, m, 32), rng);
    const Matrix out = enc.encode_sequence(uniform_rows(32, 5, rng) * 5.0);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      EXPECT_NEAR(out.row(i).norm() / std::sqrt(double(m)), 1.0, 1e-9);
    }
    EXPECT_NEAR(enc.initial_readout().norm() / std::sqrt(double(m)), 1.0, 1e-12);
  }
}

TEST(MateReadout, OffsetInitIsUnitNorm) {
  Rng rng(14);
  MemoryEncoder enc(config_for(Arch::mate, 5, 128, 8), rng);
  EXPECT_NEAR(enc.psi().value.norm(), 1.0, 1e-14);
}

TEST(Parameters, NamespacesAndNoPositionsForMate) {
  Rng rng(15);
  for (Arch a : {Arch::mate, Arch::rnn, Arch::attn}) {
    MemoryEncoder enc(config_for(a), rng);
    bool has_pos = false;
    for (auto* p : enc.parameters()) {
      const bool ok = p->name == "psi" || p->name.rfind("mem/", 0) == 0 || p->name.rfind("embed/", 0) == 0;
      EXPECT_TRUE(ok) << p->name;
      has_pos = has_pos || p->name == "mem/pos";
    }
    EXPECT_EQ(has_pos, a == Arch::attn);
  }
  auto cfg = config_for(Arch::mate);
  cfg.positional = true;
  MemoryEncoder enc(cfg, rng);
  EXPECT_FALSE(enc.config().positional);
}

TEST(Parameters, MateFeedForwardMatchesAttention) {
  Rng rng(16);
  auto count = [](MemoryEncoder& enc, const std::string& prefix) {
    std::size_t total = 0;
    for (auto* p : enc.parameters()) {
      if (p->name.rfind(prefix, 0) == 0) total += static_cast<std::size_t>(p->value.size());
    }
    return total;
  };
  MemoryEncoder mate_enc(config_for(Arch::mate, 5, 128, 16), rng);
  MemoryEncoder attn_enc(config_for(Arch::attn, 5, 128, 16), rng);
  const double ratio = double(count(mate_enc, "mem/ff")) / double(count(attn_enc, "mem/ff"));
  EXPECT_GE(ratio, 0.9);
  EXPECT_LE(ratio, 1.1);
}

TEST(Parameters, ArchParsing) {
  EXPECT_EQ(parse_arch("attn"), Arch::attn);
  EXPECT_THROW(parse_arch("gpt"), ConfigError);
  EXPECT_EQ(parse_mate_encoder("single_layer"), MateEncoderKind::single_layer);
}

TEST(EncoderGradients, AllArchitecturesMatchFiniteDifferences) {
  Rng rng(17);
  for (Arch a : {Arch::mate, Arch::rnn, Arch::attn}) {
    MemoryEncoder enc(config_for(a, 3, 4, 6), rng);
    const Matrix xs = uniform_rows(7, 3, rng);
    const auto seg = nn::Segments::from_lengths(std::vector<std::size_t>{4, 3});
    const Matrix w = uniform_rows(7, 4, rng);
    auto ps = enc.parameters();
    const double err = nn::finite_difference_check(
        [&](nn::Tape& t) { return t.sum(t.mul(enc.encode_sequence(t, xs, seg), t.input(w))); }, ps, 1e-5);
    EXPECT_LE(err, 1e-4) << to_string(a);
  }
}

TEST(GaussianEncoder, Examples) {
  const Vector a = gaussian_analytic_encoder(0.0, 1.0);
  EXPECT_EQ(a(0), 0.0);
  EXPECT_EQ(a(1), 1.0);
  const Vector b = gaussian_analytic_encoder(2.0, 0.5);
  EXPECT_EQ(b(0), 4.0);
  EXPECT_EQ(b(1), 2.0);
  const Vector sum = gaussian_analytic_encoder(1.0, 1.0) + gaussian_analytic_encoder(3.0, 1.0);
  EXPECT_EQ(sum(0), 4.0);
  EXPECT_EQ(sum(1), 2.0);
  EXPECT_DOUBLE_EQ(sum(0) / sum(1), 2.0);
  EXPECT_DOUBLE_EQ(1.0 / sum(1), 0.5);
  EXPECT_THROW(gaussian_analytic_encoder(1.0, 0.0), DomainError);
  EXPECT_THROW(gaussian_analytic_encoder(1.0, -2.0), DomainError);
}

TEST(GaussianEncoder, SumMatchesSequentialMomentUpdate) {
  // Independent route: fold evidence one observation at a time in (mean, variance) form.
  Rng rng(18);
  std::normal_distribution<double> mu(0.0, 3.0);
  std::uniform_real_distribution<double> var(0.05, 4.0);
  for (int trial = 0; trial < 100; ++trial) {
    Vector sum = Vector::Zero(2);
    double mean = 0.0, variance = 0.0;
    for (int i = 0; i < 100; ++i) {
      const double m = mu(rng), v = var(rng);
      sum += gaussian_analytic_encoder(m, v);
      if (i == 0) {
        mean = m;
        variance = v;
      } else {
        mean = (mean * v + m * variance) / (variance + v);
        variance = variance * v / (variance + v);
      }
    }
    EXPECT_NEAR(sum(0) / (mean / variance), 1.0, 1e-10);
    EXPECT_NEAR(sum(1) / (1.0 / variance), 1.0, 1e-10);
  }
}

TEST(Recovery, EmptyHistory) {
  const Vector n = normalize_augmented(Vector::Zero(4), std::sqrt(5.0));
  const Vector r = recover_unnormalized(std::span<const double>(n.data(), n.size()), std::sqrt(5.0));
  EXPECT_EQ(r.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Recovery, ThreeFour) {
  Vector raw(2);
  raw << 3.0, 4.0;
  const double s = std::sqrt(3.0);
  const Vector n = normalize_augmented(raw, s);
  // Pre-normalization vector (3, 4, 1) has norm sqrt(26).
  EXPECT_NEAR(n(2), s / std::sqrt(26.0), 1e-15);
  const Vector r = recover_unnormalized(std::span<const double>(n.data(), n.size()), s);
  EXPECT_NEAR(r(0), 3.0, 1e-12);
  EXPECT_NEAR(r(1), 4.0, 1e-12);
}

TEST(Recovery, RandomRoundTrip) {
  Rng rng(19);
  std::normal_distribution<double> d(0.0, 1.0);
  std::uniform_real_distribution<double> logscale(-3.0, 3.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    Vector raw(8);
    const double sc = std::pow(10.0, logscale(rng));
    for (int i = 0; i < 8; ++i) raw(i) = sc * d(rng);
    const Vector n = normalize_augmented(raw, 3.0);
    const Vector back = recover_unnormalized(std::span<const double>(n.data(), n.size()), 3.0);
    worst = std::max(worst, (back - raw).norm() / raw.norm());
    const Vector again = normalize_augmented(back, 3.0);
    worst = std::max(worst, (again - n).norm() / n.norm());
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Recovery, NonPositiveLastCoordinateIsDegenerate) {
  const std::vector<double> bad{1.0, 0.0};
  EXPECT_THROW(recover_unnormalized(bad, 1.0), DegenerateError);
  const std::vector<double> neg{1.0, -0.5};
  EXPECT_THROW(recover_unnormalized(neg, 1.0), DegenerateError);
}

TEST(Injectivity, IdenticalMultisetsAreNotCollisions) {
  Rng rng(20);
  const auto enc = probe_encoder(2, 4, 17, rng);
  const Matrix a = uniform_rows(3, 2, rng);
  Matrix b = a;
  b.row(0).swap(b.row(2));
  EXPECT_TRUE(same_multiset(a, b));
  EXPECT_LE((multiset_embedding(enc, a) - multiset_embedding(enc, b)).norm(), 1e-15);
}

TEST(Injectivity, MultiplicityIsVisible) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const auto enc = probe_encoder(2, 4, 17, rng);
    const Matrix x = uniform_rows(1, 2, rng);
    Matrix xx(2, 2);
    xx << x, x;
    EXPECT_FALSE(same_multiset(x, xx));
    EXPECT_GT((multiset_embedding(enc, x) - multiset_embedding(enc, xx)).norm(), 1e-8);
  }
}

TEST(Injectivity, ProbeAtTheoreticalDimension) {
  InjectivityConfig cfg;
  cfg.pairs = 2000;
  cfg.seed = 3;
  const auto rep = injectivity_probe(cfg);
  EXPECT_EQ(rep.memory_dim, 17u);
  EXPECT_TRUE(rep.guarantee);
  EXPECT_EQ(rep.pairs, 2000u);
  EXPECT_EQ(rep.collisions, 0u);
  EXPECT_GT(rep.min_distance, 1e-8);
}

TEST(Injectivity, OtherDimensionWarnsButRuns) {
  InjectivityConfig cfg;
  cfg.pairs = 100;
  cfg.memory_dim = 4;
  const auto rep = injectivity_probe(cfg);
  EXPECT_FALSE(rep.guarantee);
  EXPECT_FALSE(rep.warning.empty());
  EXPECT_EQ(rep.pairs, 100u);
}

namespace {

double max_gradient_gap(const nn::Gradients& a, const nn::Gradients& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max(1.0, a[i].cwiseAbs().maxCoeff());
    worst = std::max(worst, (a[i] - b[i]).cwiseAbs().maxCoeff() / scale);
  }
  return worst;
}

nn::Tape::Var weighted_readout_loss(nn::Tape& g, nn::Tape::Var r, const Matrix& weights) {
  return g.sum(g.mul(r, g.input(weights)));
}

}  // namespace

TEST(ParallelGradients, PositionParallelMatchesSingleTape) {
  Rng rng(41);
  auto cfg = config_for(Arch::mate, 5, 8, 16);
  MemoryEncoder enc(cfg, rng);
  const std::vector<std::size_t> lengths{7, 16, 1, 11};
  const auto seg = Segments::from_lengths(lengths);
  const Matrix xs = uniform_rows(static_cast<Eigen::Index>(seg.total()), 5, rng);
  const Matrix w = uniform_rows(xs.rows(), 8, rng);
  const ReadoutLoss loss = [&](nn::Tape& g, nn::Tape::Var r) { return weighted_readout_loss(g, r, w); };
  const auto ref = sequential_gradients(enc, xs, seg, loss);
  for (std::size_t workers : {1, 2, 3, 4, 64}) {
    const auto par = position_parallel_gradients(enc, xs, seg, workers, loss);
    EXPECT_NEAR(par.loss, ref.loss, 1e-10 * std::max(1.0, std::abs(ref.loss)));
    EXPECT_LE(max_gradient_gap(par.grads, ref.grads), 1e-10) << workers << " workers";
  }
  MemoryEncoder rnn(config_for(Arch::rnn, 5, 8, 16), rng);
  EXPECT_THROW(position_parallel_gradients(rnn, xs, seg, 2, loss), UsageError);
}

TEST(ParallelGradients, EpisodeParallelMatchesSingleTape) {
  for (Arch arch : {Arch::mate, Arch::rnn, Arch::attn}) {
    Rng rng(42);
    MemoryEncoder enc(config_for(arch, 5, 8, 16), rng);
    const std::vector<std::size_t> lengths{7, 16, 1, 11, 3};
    const auto seg = Segments::from_lengths(lengths);
    const Matrix xs = uniform_rows(static_cast<Eigen::Index>(seg.total()), 5, rng);
    // Additive over episodes, as the episode split requires.
    const ReadoutLoss loss = [](nn::Tape& g, nn::Tape::Var r) { return g.scale(g.sum(g.square(r)), 0.01); };
    const auto ref = sequential_gradients(enc, xs, seg, loss);
    for (std::size_t workers : {2, 3, 5, 9}) {
      const auto par = episode_parallel_gradients(enc, xs, seg, workers, loss);
      EXPECT_NEAR(par.loss, ref.loss, 1e-10 * std::max(1.0, std::abs(ref.loss))) << to_string(arch);
      EXPECT_LE(max_gradient_gap(par.grads, ref.grads), 1e-10) << to_string(arch) << " " << workers;
    }
  }
}
