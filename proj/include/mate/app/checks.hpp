#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mate::app {

enum class Suite { invariance, oracle, recovery, injectivity, gradients, all };

Suite parse_suite(std::string_view name);
std::string_view to_string(Suite s);

// Trial counts; the defaults are the full acceptance sizes.
struct CheckOptions {
  std::uint64_t seed = 0x5eed;
  std::size_t invariance_trials = 1000;
  std::size_t sufficiency_trials = 1000;
  std::size_t sufficiency_length = 100;
  std::size_t posterior_kernels = 1000;
  std::size_t recovery_trials = 1000;
  std::size_t injectivity_pairs = 10000;
  std::size_t gradient_configs = 100;
};

struct CheckLine {
  std::string name;
  bool pass = false;
  std::string measured;
};

std::vector<CheckLine> run_suite(Suite suite, const CheckOptions& options = {});

// One line per property: "PASS name  measured".
std::string format_report(const std::vector<CheckLine>& lines);
bool all_pass(const std::vector<CheckLine>& lines);

// Individual properties, shared with the acceptance runner.
std::vector<CheckLine> check_invariance(const CheckOptions& options);
CheckLine check_gaussian_sufficiency(const CheckOptions& options);
CheckLine check_discrete_posterior(const CheckOptions& options);
CheckLine check_recovery(const CheckOptions& options);
CheckLine check_injectivity(const CheckOptions& options);
std::vector<CheckLine> check_gradients(const CheckOptions& options);

inline constexpr double kInvarianceTol = 1e-12;
inline constexpr double kBaselineViolationRate = 0.99;
inline constexpr double kSufficiencyTol = 1e-10;
inline constexpr double kPosteriorLogTol = 1e-12;
inline constexpr double kRecoveryTol = 1e-9;
inline constexpr double kGradientTol = 1e-4;
inline constexpr double kGradientEps = 1e-5;

}  // namespace mate::app
