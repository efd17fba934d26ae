#include "mate/posterior/posterior.hpp"

#include "mate/errors.hpp"
#include "mate/memory/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace mate::posterior {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> v) {
  const double top = *std::max_element(v.begin(), v.end());
  if (top == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - top);
  return top + std::log(s);
}

}  // namespace

KernelTable::KernelTable(std::vector<std::string> contexts, std::size_t states, std::size_t actions)
    : labels_(std::move(contexts)), states_(states), actions_(actions) {
  if (labels_.empty() || states == 0 || actions == 0) {
    throw ConfigError("kernel table needs at least one context, state and action");
  }
  table_.resize(labels_.size() * states * actions);
}

std::size_t KernelTable::index(std::size_t c, std::size_t s, std::size_t a) const {
  if (c >= contexts() || s >= states_ || a >= actions_) {
    throw ConfigError("kernel index (context " + std::to_string(c) + ", state " + std::to_string(s) + ", action " +
                      std::to_string(a) + ") out of range");
  }
  return (c * states_ + s) * actions_ + a;
}

void KernelTable::add(std::size_t context, std::size_t state, std::size_t action, Outcome outcome) {
  if (outcome.next_state >= states_) throw ConfigError("kernel outcome next state out of range");
  if (!(outcome.probability >= 0.0) || !std::isfinite(outcome.reward)) {
    throw ConfigError("kernel outcome needs a non-negative probability and finite reward");
  }
  table_[index(context, state, action)].push_back(outcome);
}

const std::vector<Outcome>& KernelTable::outcomes(std::size_t context, std::size_t state, std::size_t action) const {
  return table_[index(context, state, action)];
}

double KernelTable::likelihood(std::size_t context, const DiscreteTransition& x) const {
  double p = 0.0;
  for (const auto& o : outcomes(context, x.state, x.action)) {
    if (o.next_state == x.next_state && o.reward == x.reward) p += o.probability;
  }
  return p;
}

void KernelTable::validate() const {
  for (std::size_t c = 0; c < contexts(); ++c) {
    for (std::size_t s = 0; s < states_; ++s) {
      for (std::size_t a = 0; a < actions_; ++a) {
        double total = 0.0;
        for (const auto& o : outcomes(c, s, a)) total += o.probability;
        if (std::abs(total - 1.0) > 1e-12) {
          throw ConfigError("kernel outcomes for (context " + labels_[c] + ", state " + std::to_string(s) +
                            ", action " + std::to_string(a) + ") sum to " + std::to_string(total));
        }
      }
    }
  }
}

KernelTable random_kernel(std::size_t contexts, std::size_t states, std::size_t actions, std::mt19937_64& rng) {
  std::vector<std::string> labels;
  for (std::size_t c = 0; c < contexts; ++c) labels.push_back("c" + std::to_string(c));
  KernelTable k(std::move(labels), states, actions);
  const double rewards[] = {0.0, 1.0};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t c = 0; c < contexts; ++c) {
    for (std::size_t s = 0; s < states; ++s) {
      for (std::size_t a = 0; a < actions; ++a) {
        std::vector<Outcome> outs;
        for (std::size_t sn = 0; sn < states; ++sn) {
          for (double r : rewards) {
            // Roughly a quarter of outcomes are impossible under a given context.
            const double w = u(rng) < 0.25 ? 0.0 : u(rng);
            outs.push_back({sn, r, w});
          }
        }
        double total = 0.0;
        for (const auto& o : outs) total += o.probability;
        if (total == 0.0) {
          outs.front().probability = 1.0;
          total = 1.0;
        }
        for (auto& o : outs) o.probability /= total;
        // Put the rounding residue on the largest entry so the list sums to 1 tightly.
        auto big = std::max_element(outs.begin(), outs.end(),
                                    [](const Outcome& x, const Outcome& y) { return x.probability < y.probability; });
        double rest = 0.0;
        for (const auto& o : outs) {
          if (&o != &*big) rest += o.probability;
        }
        big->probability = 1.0 - rest;
        for (const auto& o : outs) {
          if (o.probability > 0.0) k.add(c, s, a, o);
        }
      }
    }
  }
  return k;
}

CategoricalPosterior::CategoricalPosterior(std::vector<std::string> labels, std::span<const double> prior)
    : labels_(std::move(labels)) {
  if (labels_.size() != prior.size() || prior.empty()) {
    throw ConfigError("categorical prior: need one probability per context label");
  }
  double total = 0.0;
  for (double p : prior) {
    if (!(p >= 0.0)) throw ConfigError("categorical prior: negative or NaN probability");
    total += p;
    log_weights_.push_back(p > 0.0 ? std::log(p) : kNegInf);
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("categorical prior sums to " + std::to_string(total));
}

CategoricalPosterior CategoricalPosterior::uniform(std::vector<std::string> labels) {
  std::vector<double> p(labels.size(), 1.0 / static_cast<double>(labels.size()));
  return CategoricalPosterior(std::move(labels), p);
}

std::vector<double> CategoricalPosterior::log_probabilities() const {
  const double z = log_sum_exp(log_weights_);
  if (z == kNegInf) throw DataError("categorical posterior has no mass");
  std::vector<double> out(log_weights_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = log_weights_[i] - z;
  return out;
}

std::vector<double> CategoricalPosterior::probabilities() const {
  const double top = *std::max_element(log_weights_.begin(), log_weights_.end());
  if (top == kNegInf) throw DataError("categorical posterior has no mass");
  std::vector<double> out(log_weights_.size());
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::exp(log_weights_[i] - top);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

CategoricalPosterior discrete_posterior_update(const CategoricalPosterior& post, const KernelTable& kernel,
                                               const DiscreteTransition& x) {
  if (post.size() != kernel.contexts()) throw ConfigError("posterior and kernel disagree on the number of contexts");
  CategoricalPosterior out = post;
  auto& w = out.mutable_log_weights();
  bool possible = false;
  for (std::size_t c = 0; c < w.size(); ++c) {
    const double p = kernel.likelihood(c, x);
    w[c] = p > 0.0 ? w[c] + std::log(p) : kNegInf;
    possible = possible || w[c] != kNegInf;
  }
  if (!possible) {
    throw DataError("impossible evidence: transition (s=" + std::to_string(x.state) + ", a=" + std::to_string(x.action) +
                    ", s'=" + std::to_string(x.next_state) + ", r=" + std::to_string(x.reward) +
                    ") has zero likelihood under every context");
  }
  return out;
}

CategoricalPosterior discrete_posterior_batch(const CategoricalPosterior& prior, const KernelTable& kernel,
                                              std::span<const DiscreteTransition> history) {
  CategoricalPosterior post = prior;
  for (const auto& x : history) post = discrete_posterior_update(post, kernel, x);
  return post;
}

double GaussianPosterior::mean() const {
  if (!(precision > 0.0)) throw UsageError("Gaussian posterior has no evidence yet");
  return weighted_mean / precision;
}

double GaussianPosterior::variance() const {
  if (!(precision > 0.0)) throw UsageError("Gaussian posterior has no evidence yet");
  return 1.0 / precision;
}

GaussianPosterior gaussian_posterior_update(const GaussianPosterior& post, const GaussianEvidence& obs) {
  if (!(obs.variance > 0.0) || !std::isfinite(obs.variance)) {
    throw DomainError("Gaussian evidence variance must be positive, got " + std::to_string(obs.variance));
  }
  return {post.weighted_mean + obs.mean / obs.variance, post.precision + 1.0 / obs.variance};
}

double verify_memory_sufficiency(std::span<const GaussianEvidence> history) {
  if (history.empty()) throw UsageError("verify_memory_sufficiency: empty history");
  Eigen::VectorXd raw = Eigen::VectorXd::Zero(2);
  GaussianPosterior post;
  for (const auto& obs : history) {
    raw += memory::gaussian_analytic_encoder(obs.mean, obs.variance);
    post = gaussian_posterior_update(post, obs);
  }
  auto rel = [](double a, double b) {
    const double scale = std::max(std::abs(a), std::abs(b));
    return scale == 0.0 ? 0.0 : std::abs(a - b) / scale;
  };
  return std::max(rel(raw(0), post.weighted_mean), rel(raw(1), post.precision));
}

KernelTable parse_kernel(const std::string& text, std::vector<double>* prior) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> labels;
  std::size_t states = 0, actions = 0;
  std::vector<double> prior_values;
  struct Row {
    std::string context;
    std::size_t s, a, sn;
    double r, p;
    int line;
  };
  std::vector<Row> rows;
  int lineno = 0;
  auto fail = [&](const std::string& what) {
    throw ConfigError("kernel line " + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "outcome") {
      Row r;
      r.line = lineno;
      if (!(ls >> r.context >> r.s >> r.a >> r.sn >> r.r >> r.p)) fail("expected 'outcome <context> s a s' r p'");
      rows.push_back(r);
      continue;
    }
    std::string eq;
    if (!(ls >> eq) || eq != "=") fail("expected '" + key + " = ...'");
    if (key == "contexts") {
      for (std::string v; ls >> v;) labels.push_back(v);
    } else if (key == "states") {
      if (!(ls >> states)) fail("states needs a count");
    } else if (key == "actions") {
      if (!(ls >> actions)) fail("actions needs a count");
    } else if (key == "prior") {
      for (double v; ls >> v;) prior_values.push_back(v);
    } else {
      fail("unknown key '" + key + "'");
    }
  }
  KernelTable k(labels, states, actions);
  for (const auto& r : rows) {
    auto it = std::find(labels.begin(), labels.end(), r.context);
    lineno = r.line;
    if (it == labels.end()) fail("unknown context '" + r.context + "'");
    try {
      k.add(static_cast<std::size_t>(it - labels.begin()), r.s, r.a, {r.sn, r.r, r.p});
    } catch (const ConfigError& e) {
      fail(e.what());
    }
  }
  k.validate();
  if (prior) {
    if (prior_values.empty()) prior_values.assign(labels.size(), 1.0 / static_cast<double>(labels.size()));
    CategoricalPosterior check(labels, prior_values);
    *prior = prior_values;
  }
  return k;
}

KernelTable load_kernel(const std::filesystem::path& path, std::vector<double>* prior) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open kernel file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_kernel(ss.str(), prior);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace mate::posterior
