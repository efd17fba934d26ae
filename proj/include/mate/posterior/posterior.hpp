#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace mate::posterior {

struct DiscreteTransition {
  std::size_t state = 0;
  std::size_t action = 0;
  std::size_t next_state = 0;
  double reward = 0.0;
};

struct Outcome {
  std::size_t next_state = 0;
  double reward = 0.0;
  double probability = 0.0;
};

// p(s', r | s, a, c) as explicit outcome lists. Each (c, s, a) list sums to 1 within 1e-12.
class KernelTable {
 public:
  KernelTable() = default;
  KernelTable(std::vector<std::string> contexts, std::size_t states, std::size_t actions);

  std::size_t contexts() const { return labels_.size(); }
  std::size_t states() const { return states_; }
  std::size_t actions() const { return actions_; }
  const std::vector<std::string>& labels() const { return labels_; }

  void add(std::size_t context, std::size_t state, std::size_t action, Outcome outcome);
  const std::vector<Outcome>& outcomes(std::size_t context, std::size_t state, std::size_t action) const;
  // Probability of (s', r) given (s, a, c); 0 when the outcome is not listed.
  double likelihood(std::size_t context, const DiscreteTransition& x) const;
  // ConfigError naming the first (c, s, a) whose outcomes do not sum to 1.
  void validate() const;

 private:
  std::size_t index(std::size_t c, std::size_t s, std::size_t a) const;

  std::vector<std::string> labels_;
  std::size_t states_ = 0;
  std::size_t actions_ = 0;
  std::vector<std::vector<Outcome>> table_;
};

// Random kernel with some impossible outcomes; rewards drawn from a small discrete set.
KernelTable random_kernel(std::size_t contexts, std::size_t states, std::size_t actions, std::mt19937_64& rng);

// Belief over contexts kept as unnormalized log-weights.
class CategoricalPosterior {
 public:
  CategoricalPosterior() = default;
  // Prior probabilities must be non-negative and sum to 1 within 1e-12.
  CategoricalPosterior(std::vector<std::string> labels, std::span<const double> prior);
  static CategoricalPosterior uniform(std::vector<std::string> labels);

  std::size_t size() const { return log_weights_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }
  std::span<const double> log_weights() const { return log_weights_; }
  std::vector<double>& mutable_log_weights() { return log_weights_; }
  // Normalized via a max shift before exponentiation.
  std::vector<double> probabilities() const;
  std::vector<double> log_probabilities() const;

 private:
  std::vector<std::string> labels_;
  std::vector<double> log_weights_;
};

// log-weight[c] += log p(s', r | s, a, c). DataError when the transition is impossible under every context.
CategoricalPosterior discrete_posterior_update(const CategoricalPosterior& post, const KernelTable& kernel,
                                               const DiscreteTransition& x);
CategoricalPosterior discrete_posterior_batch(const CategoricalPosterior& prior, const KernelTable& kernel,
                                              std::span<const DiscreteTransition> history);

struct GaussianEvidence {
  double mean = 0.0;
  double variance = 1.0;
};

// Precision-weighted mean and precision of a Gaussian belief with a flat prior.
struct GaussianPosterior {
  double weighted_mean = 0.0;  // mean / variance
  double precision = 0.0;      // 1 / variance

  // UsageError before any evidence (precision 0).
  double mean() const;
  double variance() const;
};

// DomainError unless variance > 0.
GaussianPosterior gaussian_posterior_update(const GaussianPosterior& post, const GaussianEvidence& obs);

// Max componentwise relative deviation between the summed analytic encodings of `history`
// and the folded Gaussian posterior.
double verify_memory_sufficiency(std::span<const GaussianEvidence> history);

// Key-value fixture format; see docs/kernel_format.md.
KernelTable parse_kernel(const std::string& text, std::vector<double>* prior = nullptr);
KernelTable load_kernel(const std::filesystem::path& path, std::vector<double>* prior = nullptr);

}  // namespace mate::posterior
