#include "mate/app/checks.hpp"

#include "mate/envs/env.hpp"
#include "mate/errors.hpp"
#include "mate/memory/analytic.hpp"
#include "mate/nn/optim.hpp"
#include "mate/nn/seed.hpp"
#include "mate/posterior/posterior.hpp"
#include "mate/rl/ddqn.hpp"
#include "mate/rl/sac.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace mate::app {

namespace {

using memory::Arch;
using memory::MemoryEncoder;
using nn::Matrix;
using nn::Rng;
using nn::Vector;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Row permutation that differs from the identity (rows >= 2).
Matrix shuffled_rows(const Matrix& xs, Rng& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(xs.rows()));
  std::iota(order.begin(), order.end(), 0);
  do {
    std::shuffle(order.begin(), order.end(), rng);
  } while (std::is_sorted(order.begin(), order.end()));
  Matrix out(xs.rows(), xs.cols());
  for (Eigen::Index i = 0; i < xs.rows(); ++i) out.row(i) = xs.row(order[static_cast<std::size_t>(i)]);
  return out;
}

double relative(const Vector& a, const Vector& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale > 0.0 ? (a - b).norm() / scale : 0.0;
}

memory::EncoderConfig encoder_config(Arch arch, std::size_t input_dim, std::size_t memory_dim, std::size_t horizon) {
  memory::EncoderConfig c;
  c.arch = arch;
  c.input_dim = input_dim;
  c.memory_dim = memory_dim;
  c.horizon = horizon;
  return c;
}

// Final encoder output after feeding the rows one at a time: the raw sum for MATE,
// the last readout otherwise.
Vector final_summary(const MemoryEncoder& enc, const Matrix& xs) {
  auto state = enc.initial_state();
  Vector last;
  for (Eigen::Index i = 0; i < xs.rows(); ++i) {
    last = enc.encode_step(state, std::span<const double>(xs.row(i).data(), static_cast<std::size_t>(xs.cols())));
  }
  if (const auto* s = std::get_if<memory::MateState>(&state)) return s->raw_sum;
  return last;
}

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Linear-space product of prior and likelihoods, normalised at the end.
std::vector<double> enumerated_log_posterior(const posterior::KernelTable& k, std::span<const double> prior,
                                             std::span<const posterior::DiscreteTransition> history) {
  std::vector<double> joint(k.contexts());
  for (std::size_t c = 0; c < k.contexts(); ++c) {
    double p = prior[c];
    for (const auto& x : history) {
      double lik = 0.0;
      for (const auto& o : k.outcomes(c, x.state, x.action)) {
        if (o.next_state == x.next_state && o.reward == x.reward) lik += o.probability;
      }
      p *= lik;
    }
    joint[c] = p;
  }
  const double z = std::accumulate(joint.begin(), joint.end(), 0.0);
  std::vector<double> out(joint.size());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = joint[c] > 0.0 ? std::log(joint[c] / z) : kNegInf;
  return out;
}

std::vector<posterior::DiscreteTransition> sample_history(const posterior::KernelTable& k, std::size_t context,
                                                          std::size_t length, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<posterior::DiscreteTransition> h;
  std::size_t s = 0;
  for (std::size_t t = 0; t < length; ++t) {
    const std::size_t a = pick(rng, 0, k.actions() - 1);
    const auto& outs = k.outcomes(context, s, a);
    double draw = u(rng);
    const posterior::Outcome* chosen = nullptr;
    for (const auto& o : outs) {
      if (o.probability <= 0.0) continue;
      chosen = &o;
      if (draw < o.probability) break;
      draw -= o.probability;
    }
    h.push_back({s, a, chosen->next_state, chosen->reward});
    s = chosen->next_state;
  }
  return h;
}

// Worst log-space gap; -inf must match -inf exactly.
double log_gap(const std::vector<double>& got, const std::vector<double>& want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    if (want[i] == kNegInf || got[i] == kNegInf) {
      if (want[i] != got[i]) return std::numeric_limits<double>::infinity();
      continue;
    }
    worst = std::max(worst, std::abs(got[i] - want[i]));
  }
  return worst;
}

nn::Activation random_activation(Rng& rng) {
  constexpr std::array acts{nn::Activation::identity, nn::Activation::tanh, nn::Activation::gelu,
                            nn::Activation::relu, nn::Activation::softplus};
  return acts[pick(rng, 0, acts.size() - 1)];
}

// Moves every parameter off its initialiser (zero biases put ReLU units exactly on the kink).
void jitter(std::span<nn::Parameter* const> params, Rng& rng) {
  std::normal_distribution<double> noise(0.0, 0.1);
  for (auto* p : params) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += noise(rng);
  }
}

using LossFn = std::function<nn::Tape::Var(nn::Tape&)>;

struct GradientCase {
  LossFn loss;
  nn::ParamList params;
};

// Runs `configs` freshly drawn cases through the finite-difference check.
template <typename Make>
CheckLine gradient_component(const std::string& name, std::size_t configs, std::uint64_t seed, Make make) {
  Rng rng(nn::derive_seed(seed, "gradients/" + name));
  double worst = 0.0;
  for (std::size_t i = 0; i < configs; ++i) {
    GradientCase c = make(rng);
    jitter(c.params, rng);
    worst = std::max(worst, nn::finite_difference_check(c.loss, c.params, kGradientEps));
  }
  return {"gradients/" + name, worst <= kGradientTol,
          "max rel err " + fmt(worst) + " over " + std::to_string(configs) + " configs (<= " + fmt(kGradientTol) + ")"};
}

// Weighted sum as a generic scalar probe of every output entry.
nn::Tape::Var probe(nn::Tape& t, nn::Tape::Var out, const Matrix& weights) {
  return t.sum(t.mul(out, t.input(weights)));
}

std::vector<envs::EpisodeRecord> random_episodes(const envs::EnvConfig& cfg, std::size_t count, Rng& rng) {
  auto env = envs::make_env(envs::resolve(cfg));
  const auto space = env->action_space();
  std::vector<envs::EpisodeRecord> out;
  for (std::size_t e = 0; e < count; ++e) {
    Rng act_rng(rng());
    out.push_back(envs::rollout(*env, rng(), [&](const Vector&, std::size_t) {
      if (space.kind == envs::ActionKind::discrete) {
        return envs::Action::discrete(
            std::uniform_int_distribution<std::int64_t>(0, static_cast<std::int64_t>(space.size) - 1)(act_rng));
      }
      return envs::Action::continuous(uniform_matrix(static_cast<Eigen::Index>(space.size), 1, act_rng));
    }));
  }
  return out;
}

rl::HeadConfig small_heads(Rng& rng) {
  rl::HeadConfig h;
  h.hidden = {pick(rng, 2, 5), pick(rng, 2, 5)};
  h.state_dim = pick(rng, 2, 4);
  h.activation = random_activation(rng);
  return h;
}

memory::EncoderConfig small_memory(Rng& rng, std::size_t input_dim, std::size_t horizon) {
  constexpr std::array archs{Arch::none, Arch::mate, Arch::rnn, Arch::attn};
  auto c = encoder_config(archs[pick(rng, 0, archs.size() - 1)], input_dim, pick(rng, 3, 5), horizon);
  c.mate_encoder = pick(rng, 0, 1) ? memory::MateEncoderKind::residual : memory::MateEncoderKind::single_layer;
  c.positional = pick(rng, 0, 1) == 1;
  return c;
}

}  // namespace

Suite parse_suite(std::string_view name) {
  if (name == "invariance") return Suite::invariance;
  if (name == "oracle") return Suite::oracle;
  if (name == "recovery") return Suite::recovery;
  if (name == "injectivity") return Suite::injectivity;
  if (name == "gradients") return Suite::gradients;
  if (name == "all") return Suite::all;
  throw ConfigError("unknown check suite '" + std::string(name) +
                    "' (expected invariance, oracle, recovery, injectivity, gradients or all)");
}

std::string_view to_string(Suite s) {
  switch (s) {
    case Suite::invariance:
      return "invariance";
    case Suite::oracle:
      return "oracle";
    case Suite::recovery:
      return "recovery";
    case Suite::injectivity:
      return "injectivity";
    case Suite::gradients:
      return "gradients";
    case Suite::all:
      return "all";
  }
  return "?";
}

std::vector<CheckLine> check_invariance(const CheckOptions& options) {
  constexpr std::size_t kInput = 5, kMemory = 16, kMaxLen = 64;
  std::vector<CheckLine> out;
  for (Arch arch : {Arch::mate, Arch::rnn, Arch::attn}) {
    // Same histories for every architecture.
    Rng data(nn::derive_seed(options.seed, "invariance/data"));
    Rng init(nn::derive_seed(options.seed, "invariance/init/" + std::string(memory::to_string(arch))));
    double worst = 0.0;
    std::size_t violations = 0;
    for (std::size_t trial = 0; trial < options.invariance_trials; ++trial) {
      const MemoryEncoder enc(encoder_config(arch, kInput, kMemory, kMaxLen), init);
      const Matrix xs = uniform_matrix(static_cast<Eigen::Index>(pick(data, 2, kMaxLen)), kInput, data);
      const double gap = relative(final_summary(enc, xs), final_summary(enc, shuffled_rows(xs, data)));
      worst = std::max(worst, gap);
      if (gap > kInvarianceTol) ++violations;
    }
    const double rate = static_cast<double>(violations) / static_cast<double>(options.invariance_trials);
    if (arch == Arch::mate) {
      out.push_back({"invariance/mate", worst <= kInvarianceTol,
                     "max rel gap " + fmt(worst) + " over " + std::to_string(options.invariance_trials) +
                         " permuted histories (<= " + fmt(kInvarianceTol) + ")"});
    } else {
      out.push_back({"invariance/" + std::string(memory::to_string(arch)) + "_order_sensitive",
                     rate >= kBaselineViolationRate,
                     "violates on " + std::to_string(violations) + "/" + std::to_string(options.invariance_trials) +
                         " (expected >= 99%)"});
    }
  }
  return out;
}

CheckLine check_gaussian_sufficiency(const CheckOptions& options) {
  Rng rng(nn::derive_seed(options.seed, "oracle/gaussian"));
  std::normal_distribution<double> mean(0.0, 3.0);
  std::uniform_real_distribution<double> log_var(-3.0, 3.0);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < options.sufficiency_trials; ++trial) {
    std::vector<posterior::GaussianEvidence> h(options.sufficiency_length);
    for (auto& e : h) e = {mean(rng), std::exp(log_var(rng))};
    worst = std::max(worst, posterior::verify_memory_sufficiency(h));
  }
  return {"oracle/gaussian_sufficiency", worst <= kSufficiencyTol,
          "max rel dev " + fmt(worst) + " over " + std::to_string(options.sufficiency_trials) + " histories of length " +
              std::to_string(options.sufficiency_length) + " (<= " + fmt(kSufficiencyTol) + ")"};
}

CheckLine check_discrete_posterior(const CheckOptions& options) {
  Rng rng(nn::derive_seed(options.seed, "oracle/discrete"));
  std::uniform_real_distribution<double> u(0.05, 1.0);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < options.posterior_kernels; ++trial) {
    const std::size_t contexts = pick(rng, 2, 4);
    const auto k = posterior::random_kernel(contexts, pick(rng, 2, 4), pick(rng, 1, 3), rng);
    std::vector<double> prior(contexts);
    for (auto& p : prior) p = u(rng);
    const double z = std::accumulate(prior.begin(), prior.end(), 0.0);
    for (auto& p : prior) p /= z;
    const auto h = sample_history(k, pick(rng, 0, contexts - 1), 4, rng);
    const auto want = enumerated_log_posterior(k, prior, h);
    std::array<std::size_t, 4> order{0, 1, 2, 3};
    do {
      std::vector<posterior::DiscreteTransition> permuted;
      for (std::size_t i : order) permuted.push_back(h[i]);
      const auto got =
          posterior::discrete_posterior_batch(posterior::CategoricalPosterior(k.labels(), prior), k, permuted)
              .log_probabilities();
      worst = std::max(worst, log_gap(got, want));
    } while (std::next_permutation(order.begin(), order.end()));
  }
  return {"oracle/discrete_posterior", worst <= kPosteriorLogTol,
          "max log gap " + fmt(worst) + " vs enumeration, 24 orders x " + std::to_string(options.posterior_kernels) +
              " kernels (<= " + fmt(kPosteriorLogTol) + ")"};
}

CheckLine check_recovery(const CheckOptions& options) {
  Rng rng(nn::derive_seed(options.seed, "recovery"));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> log_scale(-3.0, 3.0);
  double worst = 0.0;
  for (std::size_t trial = 0; trial < options.recovery_trials; ++trial) {
    const auto dim = static_cast<Eigen::Index>(pick(rng, 8, 256));
    const double s = std::pow(10.0, log_scale(rng));
    Vector raw(dim);
    for (Eigen::Index i = 0; i < dim; ++i) raw(i) = s * normal(rng);
    const double scale = std::sqrt(static_cast<double>(dim + 1));
    const Vector n = memory::normalize_augmented(raw, scale);
    const Vector back = memory::recover_unnormalized(std::span<const double>(n.data(), static_cast<std::size_t>(n.size())), scale);
    worst = std::max(worst, relative(back, raw));
  }
  return {"recovery/round_trip", worst <= kRecoveryTol,
          "max rel err " + fmt(worst) + " over " + std::to_string(options.recovery_trials) + " vectors in R^8..R^256 (<= " +
              fmt(kRecoveryTol) + ")"};
}

CheckLine check_injectivity(const CheckOptions& options) {
  memory::InjectivityConfig cfg;
  cfg.pairs = options.injectivity_pairs;
  cfg.seed = nn::derive_seed(options.seed, "injectivity");
  const auto rep = memory::injectivity_probe(cfg);
  const bool pass = rep.collisions == 0 && rep.min_distance > cfg.threshold;
  return {"injectivity/probe", pass,
          std::to_string(rep.collisions) + " collisions over " + std::to_string(rep.pairs) + " pairs, m=" +
              std::to_string(rep.memory_dim) + ", min distance " + fmt(rep.min_distance) + " (> " + fmt(cfg.threshold) +
              ")"};
}

std::vector<CheckLine> check_gradients(const CheckOptions& options) {
  const std::size_t n = options.gradient_configs;
  const std::uint64_t seed = options.seed;
  std::vector<CheckLine> out;

  for (nn::Activation act : {nn::Activation::identity, nn::Activation::tanh, nn::Activation::gelu,
                             nn::Activation::relu, nn::Activation::softplus}) {
    out.push_back(gradient_component("mlp_" + std::string(nn::to_string(act)), n, seed, [act](Rng& rng) {
      const std::size_t in = pick(rng, 1, 5), hidden = pick(rng, 1, 6), outs = pick(rng, 1, 4);
      auto mlp = std::make_shared<nn::Mlp>(nn::Mlp::with_hidden("mlp", in, {hidden}, outs, act, act, rng));
      const Matrix x = uniform_matrix(static_cast<Eigen::Index>(pick(rng, 1, 4)), static_cast<Eigen::Index>(in), rng, -2, 2);
      const Matrix w = uniform_matrix(x.rows(), static_cast<Eigen::Index>(outs), rng);
      nn::ParamList ps;
      mlp->collect(ps);
      return GradientCase{[mlp, x, w](nn::Tape& t) { return probe(t, mlp->forward(t, t.input(x)), w); }, ps};
    }));
  }

  out.push_back(gradient_component("layer_norm", n, seed, [](Rng& rng) {
    const auto dim = pick(rng, 2, 8);
    auto ln = std::make_shared<nn::LayerNorm>("ln", dim);
    ln->gain.value = uniform_matrix(1, static_cast<Eigen::Index>(dim), rng, 0.5, 1.5);
    ln->bias.value = uniform_matrix(1, static_cast<Eigen::Index>(dim), rng);
    const Matrix x = uniform_matrix(static_cast<Eigen::Index>(pick(rng, 1, 4)), static_cast<Eigen::Index>(dim), rng, -2, 2);
    const Matrix w = uniform_matrix(x.rows(), x.cols(), rng);
    nn::ParamList ps;
    ln->collect(ps);
    return GradientCase{[ln, x, w](nn::Tape& t) { return probe(t, (*ln)(t, t.input(x)), w); }, ps};
  }));

  struct EncoderKind {
    std::string name;
    Arch arch;
    memory::MateEncoderKind mate;
  };
  for (const auto& kind : {EncoderKind{"encoder_mate_residual", Arch::mate, memory::MateEncoderKind::residual},
                           EncoderKind{"encoder_mate_single_layer", Arch::mate, memory::MateEncoderKind::single_layer},
                           EncoderKind{"encoder_rnn", Arch::rnn, memory::MateEncoderKind::residual},
                           EncoderKind{"encoder_attn", Arch::attn, memory::MateEncoderKind::residual}}) {
    out.push_back(gradient_component(kind.name, n, seed, [kind](Rng& rng) {
      auto cfg = encoder_config(kind.arch, pick(rng, 1, 3), pick(rng, 3, 5), 6);
      cfg.mate_encoder = kind.mate;
      cfg.positional = pick(rng, 0, 1) == 1;
      cfg.activation = random_activation(rng);
      auto enc = std::make_shared<MemoryEncoder>(cfg, rng);
      std::vector<std::size_t> lengths{pick(rng, 1, 6), pick(rng, 1, 6)};
      const auto seg = nn::Segments::from_lengths(lengths);
      const Matrix xs = uniform_matrix(static_cast<Eigen::Index>(lengths[0] + lengths[1]),
                                       static_cast<Eigen::Index>(cfg.input_dim), rng);
      const Matrix w = uniform_matrix(xs.rows(), static_cast<Eigen::Index>(cfg.memory_dim), rng);
      return GradientCase{[enc, xs, seg, w](nn::Tape& t) { return probe(t, enc->encode_sequence(t, xs, seg), w); },
                          enc->parameters()};
    }));
  }

  out.push_back(gradient_component("q_network", n, seed, [](Rng& rng) {
    envs::EnvConfig env;
    env.name = pick(rng, 0, 1) ? "tmaze_passive" : "tmaze_active";
    env.corridor_len = pick(rng, 2, 4);
    const auto episodes = random_episodes(env, pick(rng, 1, 3), rng);
    auto batch = std::make_shared<rl::EpisodeBatch>(rl::make_batch(episodes));
    const auto probe_env = envs::make_env(envs::resolve(env));
    auto net = std::make_shared<rl::QNetwork>(
        small_memory(rng, probe_env->transition_dim(), probe_env->horizon()), probe_env->observation_dim(),
        probe_env->action_space().size, small_heads(rng), rng);
    const Matrix w = uniform_matrix(batch->observations.rows(), static_cast<Eigen::Index>(probe_env->action_space().size), rng);
    return GradientCase{[net, batch, w](nn::Tape& t) { return probe(t, net->q_values(t, *batch), w); },
                        net->parameters()};
  }));

  out.push_back(gradient_component("sac_actor_critics", n, seed, [](Rng& rng) {
    envs::EnvConfig env;
    env.name = "point_dir";
    env.horizon = pick(rng, 2, 5);
    const auto episodes = random_episodes(env, pick(rng, 1, 3), rng);
    auto batch = std::make_shared<rl::EpisodeBatch>(rl::make_batch(episodes));
    const auto probe_env = envs::make_env(envs::resolve(env));
    const std::size_t d = probe_env->action_space().size;
    auto net = std::make_shared<rl::SacNetwork>(small_memory(rng, probe_env->transition_dim(), probe_env->horizon()),
                                                probe_env->observation_dim(), d, small_heads(rng), rng);
    const auto rows = static_cast<Eigen::Index>(batch->steps_total());
    const Matrix noise = rl::standard_normal(rows, static_cast<Eigen::Index>(d), rng);
    const Matrix wa = uniform_matrix(rows, static_cast<Eigen::Index>(d), rng);
    const Matrix wl = uniform_matrix(rows, 1, rng);
    const Matrix wq = uniform_matrix(rows, 1, rng);
    return GradientCase{[net, batch, noise, wa, wl, wq](nn::Tape& t) {
                          const auto f = t.gather_rows(net->trunk.features(t, *batch), batch->now_rows);
                          const auto pi = rl::sample_policy(t, net->actor, f, noise);
                          const auto q = rl::twin_min(t, *net, f, pi.action);
                          return t.add(t.add(probe(t, pi.action, wa), probe(t, pi.log_prob, wl)), probe(t, q, wq));
                        },
                        net->parameters()};
  }));
  return out;
}

std::vector<CheckLine> run_suite(Suite suite, const CheckOptions& options) {
  std::vector<CheckLine> out;
  auto want = [suite](Suite s) { return suite == Suite::all || suite == s; };
  if (want(Suite::invariance)) {
    for (auto& l : check_invariance(options)) out.push_back(std::move(l));
  }
  if (want(Suite::oracle)) {
    out.push_back(check_gaussian_sufficiency(options));
    out.push_back(check_discrete_posterior(options));
  }
  if (want(Suite::recovery)) out.push_back(check_recovery(options));
  if (want(Suite::injectivity)) out.push_back(check_injectivity(options));
  if (want(Suite::gradients)) {
    for (auto& l : check_gradients(options)) out.push_back(std::move(l));
  }
  return out;
}

std::string format_report(const std::vector<CheckLine>& lines) {
  std::ostringstream os;
  for (const auto& l : lines) os << (l.pass ? "PASS " : "FAIL ") << l.name << "  " << l.measured << '\n';
  return os.str();
}

bool all_pass(const std::vector<CheckLine>& lines) {
  return std::all_of(lines.begin(), lines.end(), [](const CheckLine& l) { return l.pass; });
}

}  // namespace mate::app
