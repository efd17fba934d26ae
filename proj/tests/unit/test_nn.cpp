#include "mate/errors.hpp"
#include "mate/nn/checkpoint.hpp"
#include "mate/nn/graph.hpp"
#include "mate/nn/layers.hpp"
#include "mate/nn/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace mate;
using namespace mate::nn;

namespace {

Matrix randn(Eigen::Index r, Eigen::Index c, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

Parameter rand_param(const std::string& name, Eigen::Index r, Eigen::Index c, Rng& rng, double sd = 1.0) {
  return Parameter(name, randn(r, c, rng, sd));
}

// Weighted sum so every output entry reaches the loss with a distinct coefficient.
Tape::Var probe_loss(Tape& t, Tape::Var out, const Matrix& weights) {
  return t.sum(t.mul(out, t.input(weights)));
}

}  // namespace

TEST(MlpForward, IdentityLayerPassesInputThrough) {
  Rng rng(1);
  Mlp mlp("m", {2, 2}, {Activation::identity}, rng);
  mlp.layer(0).weight.value = Matrix::Identity(2, 2);
  mlp.layer(0).bias.value.setZero();
  Matrix x(1, 2);
  x << 1.0, 2.0;
  const Matrix y = mlp_forward(mlp, x);
  EXPECT_EQ(y(0, 0), 1.0);
  EXPECT_EQ(y(0, 1), 2.0);
}

TEST(MlpForward, TanhOfZeroIsZero) {
  Rng rng(2);
  Mlp mlp("m", {2, 2}, {Activation::tanh}, rng);
  mlp.layer(0).weight.value = Matrix::Identity(2, 2);
  mlp.layer(0).bias.value.setZero();
  const Matrix y = mlp_forward(mlp, Matrix::Zero(1, 2));
  EXPECT_EQ(y(0, 0), 0.0);
  EXPECT_EQ(y(0, 1), 0.0);
}

TEST(MlpForward, ScalarTanhLayer) {
  Rng rng(3);
  Mlp mlp("m", {1, 1}, {Activation::tanh}, rng);
  mlp.layer(0).weight.value(0, 0) = 2.0;
  mlp.layer(0).bias.value(0, 0) = 1.0;
  const Matrix y = mlp_forward(mlp, Matrix::Constant(1, 1, 0.5));
  EXPECT_DOUBLE_EQ(y(0, 0), std::tanh(2.0 * 0.5 + 1.0));
}

TEST(MlpForward, WrongInputWidthIsConfigError) {
  Rng rng(4);
  Mlp mlp("m", {3, 2}, {Activation::tanh}, rng);
  EXPECT_THROW(mlp_forward(mlp, Matrix::Zero(1, 2)), ConfigError);
}

TEST(MlpForward, NonFiniteOutputNamesLayer) {
  Rng rng(5);
  Mlp mlp("m", {1, 1, 1}, {Activation::identity, Activation::identity}, rng);
  mlp.layer(1).weight.value(0, 0) = std::numeric_limits<double>::infinity();
  try {
    mlp_forward(mlp, Matrix::Constant(1, 1, 1.0));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
  }
}

TEST(MlpParams, LayerDimensionsChain) {
  Rng rng(6);
  const auto mlp = Mlp::with_hidden("q", 7, {5, 4}, 3, Activation::relu, Activation::identity, rng);
  ASSERT_EQ(mlp.depth(), 3u);
  for (std::size_t i = 0; i + 1 < mlp.depth(); ++i) EXPECT_EQ(mlp.layer(i).out_dim(), mlp.layer(i + 1).in_dim());
  EXPECT_EQ(mlp.activation(2), Activation::identity);
}

TEST(MlpParams, GlorotInitBoundsAndZeroBias) {
  Rng rng(7);
  Linear l("l", 30, 20, rng);
  const double bound = std::sqrt(6.0 / 50.0);
  EXPECT_LE(l.weight.value.cwiseAbs().maxCoeff(), bound);
  EXPECT_EQ(l.bias.value.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Activation, RegistryRoundTrip) {
  for (auto a : {Activation::identity, Activation::tanh, Activation::gelu, Activation::relu, Activation::softplus}) {
    EXPECT_EQ(parse_activation(to_string(a)), a);
  }
  EXPECT_THROW(parse_activation("swish"), ConfigError);
}

TEST(Gradients, LinearMapDerivativeIsInput) {
  Parameter A("A", Matrix::Zero(3, 2));
  Matrix x(1, 3);
  x << 0.5, -1.5, 2.0;
  Tape t;
  auto loss = t.sum(t.matmul(t.input(x), t.param(A)));
  t.backward(loss);
  Parameter* ps[] = {&A};
  const auto g = t.gradients(ps);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(g[0](i, j), x(0, i));
  }
}

TEST(Gradients, QuadraticIsTwiceParameter) {
  Parameter p("p", Matrix(1, 3));
  p.value << 1.0, -2.0, 0.25;
  Tape t;
  t.backward(t.sum(t.square(t.param(p))));
  Parameter* ps[] = {&p};
  const auto g = t.gradients(ps);
  for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(g[0](0, j), 2.0 * p.value(0, j));
}

TEST(Gradients, ParameterOffLossPathGetsZero) {
  Parameter used("u", Matrix::Ones(1, 2));
  Parameter unused("v", Matrix::Ones(2, 2));
  Tape t;
  t.param(unused);
  t.backward(t.sum(t.param(used)));
  Parameter* ps[] = {&used, &unused};
  const auto g = t.gradients(ps);
  EXPECT_EQ(g[1].rows(), 2);
  EXPECT_EQ(g[1].cwiseAbs().maxCoeff(), 0.0);
}

TEST(Gradients, NonScalarLossIsUsageError) {
  Parameter p("p", Matrix::Ones(1, 2));
  Tape t;
  EXPECT_THROW(t.backward(t.param(p)), UsageError);
}

TEST(Gradients, NanInBackwardNamesNode) {
  Parameter p("p", Matrix::Constant(1, 1, 1e200));
  Tape t;
  auto sq = t.square(t.square(t.param(p)));
  try {
    t.backward(t.sum(sq));
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("node"), std::string::npos);
  }
}

TEST(Gradients, TwoLayerTanhMatchesFiniteDifferences) {
  Rng rng(11);
  Mlp mlp("m", {4, 6, 3}, {Activation::tanh, Activation::tanh}, rng);
  const Matrix x = randn(5, 4, rng);
  const Matrix w = randn(5, 3, rng);
  ParamList ps;
  mlp.collect(ps);
  const double err = finite_difference_check(
      [&](Tape& t) { return probe_loss(t, mlp.forward(t, t.input(x)), w); }, ps, 1e-5);
  EXPECT_LE(err, 1e-4);
}

// Every op with a backward rule, each over many random draws.
class OpGradient : public ::testing::TestWithParam<int> {};

TEST_P(OpGradient, MatchesCentralDifferences) {
  Rng rng(1000 + GetParam());
  const Eigen::Index n = 4, d = 3;
  auto a = rand_param("a", n, d, rng);
  auto b = rand_param("b", n, d, rng);
  auto row = rand_param("row", 1, d, rng);
  auto sq = rand_param("sq", d, d, rng, 0.5);
  auto gain = rand_param("g", 1, d, rng);
  auto rec = rand_param("rec", d, 4 * d, rng, 0.5);
  auto win = rand_param("win", d, 4 * d, rng, 0.5);
  auto table = rand_param("table", 6, d, rng);
  ParamList ps{&a, &b, &row, &sq, &gain, &rec, &win, &table};
  const Matrix w = randn(n, d, rng);
  const auto seg = Segments::from_lengths(std::vector<std::size_t>{1, 3});
  const std::vector<std::int64_t> rows{2, -1, 0, 3};
  const std::vector<std::int64_t> cols{0, 2, 1, 1};

  using Fn = std::function<Tape::Var(Tape&)>;
  std::vector<std::pair<const char*, Fn>> cases = {
      {"matmul", [&](Tape& t) { return probe_loss(t, t.matmul(t.param(a), t.param(sq)), w); }},
      {"linear", [&](Tape& t) { return probe_loss(t, t.linear(t.param(a), sq, row), w); }},
      {"add_row", [&](Tape& t) { return probe_loss(t, t.add_row(t.param(a), t.param(row)), w); }},
      {"sub_mul", [&](Tape& t) { return probe_loss(t, t.mul(t.sub(t.param(a), t.param(b)), t.param(b)), w); }},
      {"scale_shift", [&](Tape& t) { return probe_loss(t, t.add_scalar(t.scale(t.param(a), -1.7), 0.3), w); }},
      {"tanh", [&](Tape& t) { return probe_loss(t, t.activate(t.param(a), Activation::tanh), w); }},
      {"gelu", [&](Tape& t) { return probe_loss(t, t.activate(t.param(a), Activation::gelu), w); }},
      {"relu", [&](Tape& t) { return probe_loss(t, t.activate(t.param(a), Activation::relu), w); }},
      {"softplus", [&](Tape& t) { return probe_loss(t, t.activate(t.param(a), Activation::softplus), w); }},
      {"sigmoid_exp", [&](Tape& t) { return probe_loss(t, t.exp(t.sigmoid(t.param(a))), w); }},
      {"minimum", [&](Tape& t) { return probe_loss(t, t.minimum(t.param(a), t.param(b)), w); }},
      {"concat_slice",
       [&](Tape& t) {
         auto c = t.concat_cols({t.param(a), t.param(b)});
         return probe_loss(t, t.slice_cols(c, 2, 3), w);
       }},
      {"concat_rows",
       [&](Tape& t) {
         auto c = t.concat_rows({t.param(row), t.slice_cols(t.param(a), 0, 3)});
         return t.sum(t.square(c));
       }},
      {"gather_rows", [&](Tape& t) { return probe_loss(t, t.gather_rows(t.param(a), rows), w); }},
      {"param_rows", [&](Tape& t) { return probe_loss(t, t.param_rows(table, rows), w); }},
      {"pick_cols", [&](Tape& t) { return t.sum(t.mul(t.pick_cols(t.param(a), cols), t.slice_cols(t.param(b), 1, 1))); }},
      {"row_sum_mean", [&](Tape& t) { return t.mean(t.square(t.row_sum(t.param(a)))); }},
      {"row_normalize", [&](Tape& t) { return probe_loss(t, t.row_normalize(t.param(a), 1.7), w); }},
      {"segment_cumsum", [&](Tape& t) { return probe_loss(t, t.segment_cumsum(t.param(a), seg), w); }},
      {"layer_norm", [&](Tape& t) { return probe_loss(t, t.layer_norm(t.param(a), gain, row), w); }},
      {"causal_attention",
       [&](Tape& t) {
         auto q = t.matmul(t.param(a), t.param(sq));
         return probe_loss(t, t.causal_attention(q, t.param(b), t.param(a), seg), w);
       }},
      {"lstm",
       [&](Tape& t) {
         return probe_loss(t, t.lstm_sequence(t.matmul(t.param(a), t.param(win)), seg, rec), w);
       }},
  };
  for (auto& [name, fn] : cases) {
    const double err = finite_difference_check(fn, ps, 1e-5);
    EXPECT_LE(err, 1e-4) << name;
  }
}

INSTANTIATE_TEST_SUITE_P(RandomDraws, OpGradient, ::testing::Range(0, 100));

TEST(FiniteDifference, LinearFunctionIsExact) {
  Rng rng(12);
  auto p = rand_param("p", 2, 3, rng);
  const Matrix w = randn(2, 3, rng);
  Parameter* ps[] = {&p};
  EXPECT_LE(finite_difference_check([&](Tape& t) { return probe_loss(t, t.param(p), w); }, ps, 1e-5), 1e-10);
}

TEST(FiniteDifference, ConstantFunctionGivesZero) {
  Rng rng(13);
  auto p = rand_param("p", 2, 2, rng);
  Parameter* ps[] = {&p};
  EXPECT_EQ(finite_difference_check([&](Tape& t) { return t.sum(t.input(Matrix::Ones(1, 1))); }, ps, 1e-5), 0.0);
}

TEST(FiniteDifference, RejectsBadEps) {
  Parameter p("p", Matrix::Ones(1, 1));
  Parameter* ps[] = {&p};
  auto f = [&](Tape& t) { return t.sum(t.param(p)); };
  EXPECT_THROW(finite_difference_check(f, ps, 0.0), UsageError);
  EXPECT_THROW(finite_difference_check(f, ps, 0.1), UsageError);
}

TEST(FiniteDifference, NonFiniteEvaluationIsNumericError) {
  Parameter p("p", Matrix::Constant(1, 1, 800.0));
  Parameter* ps[] = {&p};
  EXPECT_THROW(finite_difference_check([&](Tape& t) { return t.sum(t.exp(t.param(p))); }, ps, 1e-5), NumericError);
}

TEST(Adam, ZeroGradientLeavesParametersAndDecaysMoments) {
  Parameter p("p", Matrix::Constant(1, 2, 3.0));
  Parameter* ps[] = {&p};
  AdamState st(ps);
  st.first_moment[0].setConstant(1.0);
  st.second_moment[0].setConstant(1.0);
  adam_step(st, ps, {Matrix::Zero(1, 2)}, 0.1);
  EXPECT_EQ(st.step, 1);
  EXPECT_DOUBLE_EQ(st.first_moment[0](0, 0), 0.9);
  EXPECT_DOUBLE_EQ(st.second_moment[0](0, 0), 0.999);
  // Decayed moments from a non-fresh state still move the parameter; a fresh state does not.
  Parameter q("q", Matrix::Constant(1, 2, 3.0));
  Parameter* qs[] = {&q};
  AdamState fresh(qs);
  adam_step(fresh, qs, {Matrix::Zero(1, 2)}, 0.1);
  EXPECT_EQ(q.value(0, 0), 3.0);
}

TEST(Adam, FirstStepIsMinusLearningRate) {
  Parameter p("p", Matrix::Zero(1, 1));
  Parameter* ps[] = {&p};
  AdamState st(ps);
  adam_step(st, ps, {Matrix::Ones(1, 1)}, 0.1);
  // m_hat = 1, v_hat = 1 after bias correction.
  const double expected = -0.1 * 1.0 / (1.0 + 1e-8);
  EXPECT_NEAR(p.value(0, 0), expected, 1e-15);
}

TEST(Adam, ConstantGradientMovesAgainstSign) {
  Parameter p("p", Matrix::Zero(1, 2));
  Parameter* ps[] = {&p};
  AdamState st(ps);
  Matrix g(1, 2);
  g << 0.5, -2.0;
  for (int i = 0; i < 50; ++i) adam_step(st, ps, {g}, 0.01);
  EXPECT_LT(p.value(0, 0), 0.0);
  EXPECT_GT(p.value(0, 1), 0.0);
  EXPECT_EQ(st.step, 50);
}

TEST(Adam, ShapeMismatchAndBadRate) {
  Parameter p("p", Matrix::Zero(1, 2));
  Parameter* ps[] = {&p};
  AdamState st(ps);
  EXPECT_THROW(adam_step(st, ps, {Matrix::Zero(2, 1)}, 0.1), UsageError);
  EXPECT_THROW(adam_step(st, ps, {Matrix::Zero(1, 2)}, 0.0), UsageError);
}

TEST(Clip, UnderThresholdUnchanged) {
  Gradients g{Matrix::Constant(1, 1, 0.01)};
  clip_gradients(g, 0.03);
  EXPECT_EQ(g[0](0, 0), 0.01);
}

TEST(Clip, ThreeFourToUnit) {
  Matrix v(1, 2);
  v << 3.0, 4.0;
  Gradients g{v};
  EXPECT_DOUBLE_EQ(clip_gradients(g, 1.0), 5.0);
  EXPECT_DOUBLE_EQ(g[0](0, 0), 0.6);
  EXPECT_DOUBLE_EQ(g[0](0, 1), 0.8);
}

TEST(Clip, ZerosAndEmpty) {
  Gradients g{Matrix::Zero(2, 2)};
  clip_gradients(g, 1.0);
  EXPECT_EQ(g[0].cwiseAbs().maxCoeff(), 0.0);
  Gradients none;
  EXPECT_NO_THROW(clip_gradients(none, 1.0));
  EXPECT_THROW(clip_gradients(g, 0.0), UsageError);
}

TEST(Clip, NeverIncreasesNorm) {
  Rng rng(14);
  std::uniform_real_distribution<double> u(1e-3, 10.0);
  for (int trial = 0; trial < 200; ++trial) {
    Gradients g{randn(3, 2, rng, u(rng)), randn(1, 4, rng, u(rng))};
    const double before = global_norm(g);
    const double max_norm = u(rng);
    clip_gradients(g, max_norm);
    const double after = global_norm(g);
    EXPECT_LE(after, before + 1e-12);
    EXPECT_LE(after, max_norm + 1e-9);
  }
}

TEST(Hypersphere, UnitOffsetCase) {
  const int m = 5;
  Matrix off = Matrix::Zero(1, m);
  off(0, m - 1) = 1.0;
  const Matrix y = hypersphere_project(Matrix::Zero(1, m), off, std::sqrt(double(m)));
  for (int j = 0; j + 1 < m; ++j) EXPECT_EQ(y(0, j), 0.0);
  EXPECT_DOUBLE_EQ(y(0, m - 1), std::sqrt(double(m)));
}

TEST(Hypersphere, ThreeFour) {
  Matrix v(1, 2);
  v << 3.0, 4.0;
  const Matrix y = hypersphere_project(v, Matrix::Zero(1, 2), 1.0);
  EXPECT_DOUBLE_EQ(y(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(y(0, 1), 0.8);
}

TEST(Hypersphere, AlreadyOnSphereKeepsNorm) {
  Matrix v(1, 2);
  v << 0.6 * 2.0, 0.8 * 2.0;
  const Matrix y = hypersphere_project(v, Matrix::Zero(1, 2), 2.0);
  EXPECT_NEAR(y.norm(), 2.0, 1e-15);
}

TEST(Hypersphere, DegenerateIsError) {
  Matrix v(1, 2);
  v << 1.0, -1.0;
  EXPECT_THROW(hypersphere_project(v, -v, 1.0), DegenerateError);
}

TEST(Hypersphere, NormPropertyRandom) {
  Rng rng(15);
  std::uniform_real_distribution<double> logscale(-6.0, 6.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const Eigen::Index m = 1 + trial % 64;
    const Matrix v = randn(1, m, rng, std::pow(10.0, logscale(rng)));
    const Matrix off = randn(1, m, rng, std::pow(10.0, logscale(rng)));
    const double scale = std::sqrt(double(m));
    const Matrix y = hypersphere_project(v, off, scale);
    EXPECT_NEAR(y.norm() / scale, 1.0, 1e-9);
  }
}

TEST(Hypersphere, DifferentiableInBothArguments) {
  Rng rng(16);
  auto v = rand_param("v", 2, 4, rng);
  auto off = rand_param("off", 1, 4, rng);
  const Matrix w = randn(2, 4, rng);
  Parameter* ps[] = {&v, &off};
  const double err = finite_difference_check(
      [&](Tape& t) { return probe_loss(t, t.row_normalize(t.add_param_row(t.param(v), off), 2.0), w); }, ps, 1e-5);
  EXPECT_LE(err, 1e-4);
}

TEST(Determinism, SameSeedSameTrajectory) {
  auto run = [] {
    Rng rng(99);
    Mlp mlp("m", {3, 8, 2}, {Activation::tanh, Activation::identity}, rng);
    ParamList ps;
    mlp.collect(ps);
    AdamState st(ps);
    const Matrix x = randn(16, 3, rng);
    for (int i = 0; i < 20; ++i) {
      Tape t;
      t.backward(t.mean(t.square(mlp.forward(t, t.input(x)))));
      auto g = t.gradients(ps);
      clip_gradients(g, 0.5);
      adam_step(st, ps, g, 1e-2);
    }
    return mlp.layer(0).weight.value;
  };
  const Matrix a = run();
  const Matrix b = run();
  EXPECT_EQ(std::memcmp(a.data(), b.data(), sizeof(double) * a.size()), 0);
}

TEST(Tensor, ShapeMustMatchValues) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), UsageError);
  EXPECT_NO_THROW(Tensor({2, 3}, std::vector<double>(6)));
}

TEST(Checkpoint, BitExactRoundTrip) {
  Rng rng(17);
  TensorList in;
  Matrix m = randn(3, 4, rng);
  m(0, 0) = -0.0;
  m(1, 1) = std::numeric_limits<double>::denorm_min();
  m(2, 2) = std::nextafter(1.0, 2.0);
  in.push_back({"mem/w", Tensor::from_matrix(m), DType::f64});
  in.push_back({"scalar", Tensor({}, {42.5}), DType::f64});
  in.push_back({"half", Tensor({2}, {1.5, -2.25}), DType::f32});
  const auto path = std::filesystem::temp_directory_path() / "mate_ckpt_roundtrip.bin";
  write_checkpoint(path, in);
  const auto out = read_checkpoint(path);
  std::filesystem::remove(path);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].name, "mem/w");
  ASSERT_EQ(out[0].tensor.values.size(), 12u);
  EXPECT_EQ(std::memcmp(out[0].tensor.values.data(), in[0].tensor.values.data(), 12 * sizeof(double)), 0);
  EXPECT_EQ(out[1].tensor, in[1].tensor);
  EXPECT_EQ(out[2].tensor.values, in[2].tensor.values);
}

TEST(Checkpoint, HeaderBytes) {
  const auto bytes = encode_checkpoint({});
  ASSERT_EQ(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "MATE");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
}

TEST(Checkpoint, TruncatedAndBadMagic) {
  auto bytes = encode_checkpoint({{"x", Tensor({2}, {1.0, 2.0}), DType::f64}});
  auto cut = bytes;
  cut.pop_back();
  EXPECT_THROW(decode_checkpoint(cut), DataError);
  bytes[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bytes), DataError);
}

TEST(Checkpoint, RestoreNamesMismatchedTensor) {
  Parameter a("a", Matrix::Ones(2, 2));
  Parameter b("b", Matrix::Ones(1, 3));
  Parameter* ps[] = {&a, &b};
  auto snap = snapshot(ps);
  snap[1].tensor = Tensor({1, 2}, {0.0, 0.0});
  try {
    restore(ps, snap);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("'b'"), std::string::npos);
  }
  EXPECT_EQ(a.value(0, 0), 1.0);
}
