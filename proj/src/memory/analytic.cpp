#include "mate/memory/analytic.hpp"

#include "mate/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mate::memory {

Vector gaussian_analytic_encoder(double mean, double variance) {
  if (!(variance > 0.0) || !std::isfinite(variance) || !std::isfinite(mean)) {
    throw DomainError("gaussian encoder: variance must be positive and finite, got " + std::to_string(variance));
  }
  Vector e(2);
  e << mean / variance, 1.0 / variance;
  return e;
}

Vector normalize_augmented(const Vector& raw, double scale) {
  const auto m0 = raw.size();
  Matrix row = Matrix::Zero(1, m0 + 1);
  row.leftCols(m0) = raw.transpose();
  Matrix offset = Matrix::Zero(1, m0 + 1);
  offset(0, m0) = 1.0;
  return nn::hypersphere_project(row, offset, scale).row(0).transpose();
}

Vector recover_unnormalized(std::span<const double> normalized, double scale) {
  if (normalized.empty()) throw UsageError("recover_unnormalized: empty input");
  if (!(scale > 0.0)) throw UsageError("recover_unnormalized: scale must be positive");
  const std::size_t m0 = normalized.size() - 1;
  const double last = normalized[m0];
  if (!(last / scale > 1e-12)) {
    throw DegenerateError("recover_unnormalized: last coordinate " + std::to_string(last) + " is not positive");
  }
  Vector out(static_cast<Eigen::Index>(m0));
  for (std::size_t i = 0; i < m0; ++i) out(static_cast<Eigen::Index>(i)) = normalized[i] / last;
  return out;
}

namespace {

std::vector<std::vector<double>> sorted_rows(const Matrix& a) {
  std::vector<std::vector<double>> rows(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) rows[i].assign(a.row(i).data(), a.row(i).data() + a.cols());
  std::sort(rows.begin(), rows.end());
  return rows;
}

}  // namespace

bool same_multiset(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) return false;
  if (a.rows() == 0) return true;
  if (a.cols() != b.cols()) return false;
  return sorted_rows(a) == sorted_rows(b);
}

Vector multiset_embedding(const MemoryEncoder& encoder, const Matrix& set) {
  const auto m = static_cast<Eigen::Index>(encoder.config().memory_dim);
  if (set.rows() == 0) return Vector::Zero(m);
  nn::Eval g;
  const Matrix e = encoder.transition_embeddings(g, set);
  // Left fold in row order, the same order the rollout accumulates in.
  Vector sum = Vector::Zero(m);
  for (Eigen::Index i = 0; i < e.rows(); ++i) sum += e.row(i).transpose();
  return sum;
}

MemoryEncoder probe_encoder(std::size_t input_dim, std::size_t horizon, std::size_t memory_dim, nn::Rng& rng) {
  EncoderConfig cfg;
  cfg.arch = Arch::mate;
  cfg.mate_encoder = MateEncoderKind::single_layer;
  cfg.activation = nn::Activation::tanh;
  cfg.input_dim = input_dim;
  cfg.horizon = horizon;
  cfg.memory_dim = memory_dim;
  MemoryEncoder enc(cfg, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto& layer = enc.mate_first();
  for (Eigen::Index i = 0; i < layer.weight.value.size(); ++i) layer.weight.value.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < layer.bias.value.size(); ++i) layer.bias.value.data()[i] = normal(rng);
  return enc;
}

InjectivityReport injectivity_probe(const InjectivityConfig& config) {
  if (config.input_dim == 0 || config.horizon == 0) throw ConfigError("injectivity probe: n and T must be positive");
  if (config.pairs == 0) throw ConfigError("injectivity probe: need at least one pair");
  const std::size_t theory = 2 * config.input_dim * config.horizon + 1;
  InjectivityReport report;
  report.memory_dim = config.memory_dim ? config.memory_dim : theory;
  if (report.memory_dim != theory) {
    report.guarantee = false;
    report.warning = "memory_dim " + std::to_string(report.memory_dim) + " differs from 2nT+1 = " +
                     std::to_string(theory) + "; injectivity is not guaranteed";
  }

  nn::Rng rng(config.seed);
  const MemoryEncoder enc = probe_encoder(config.input_dim, config.horizon, report.memory_dim, rng);
  const auto n = static_cast<Eigen::Index>(config.input_dim);
  const auto T = static_cast<Eigen::Index>(config.horizon);
  std::uniform_real_distribution<double> box(-1.0, 1.0);
  auto point = [&] {
    Matrix p(1, n);
    for (Eigen::Index j = 0; j < n; ++j) p(0, j) = box(rng);
    return p;
  };
  auto random_set = [&](Eigen::Index size) {
    Matrix s(size, n);
    for (Eigen::Index i = 0; i < size; ++i) s.row(i) = point();
    return s;
  };
  auto uniform_index = [&](Eigen::Index lo, Eigen::Index hi) {
    return std::uniform_int_distribution<Eigen::Index>(lo, hi)(rng);
  };

  report.min_distance = std::numeric_limits<double>::infinity();
  std::size_t attempt = 0;
  while (report.pairs < config.pairs) {
    int mode = static_cast<int>(attempt++ % 5);
    if (T == 1 && mode == 1) mode = 0;
    // Growing modes leave room for one more element; mode 2 may start from the empty set.
    const Eigen::Index lo = mode == 2 || mode == 4 ? 0 : 1;
    const Eigen::Index hi = mode == 1 || mode == 2 ? T - 1 : T;
    const Eigen::Index size = uniform_index(lo, hi);
    const Matrix a = random_set(size);
    Matrix b = a;
    switch (mode) {
      case 0:  // replace one element
        b.row(uniform_index(0, size - 1)) = point();
        break;
      case 1:  // raise the multiplicity of an existing element
        b.conservativeResize(size + 1, n);
        b.row(size) = a.row(uniform_index(0, size - 1));
        break;
      case 2:  // add a fresh element
        b.conservativeResize(size + 1, n);
        b.row(size) = point();
        break;
      case 3: {  // drop an element
        const Eigen::Index skip = uniform_index(0, size - 1);
        b = Matrix(size - 1, n);
        for (Eigen::Index i = 0, k = 0; i < size; ++i) {
          if (i != skip) b.row(k++) = a.row(i);
        }
        break;
      }
      default:  // independent draw
        b = random_set(uniform_index(0, T));
        break;
    }
    if (same_multiset(a, b)) continue;
    const double dist = (multiset_embedding(enc, a) - multiset_embedding(enc, b)).norm();
    report.min_distance = std::min(report.min_distance, dist);
    if (dist < config.threshold) ++report.collisions;
    ++report.pairs;
  }
  return report;
}

}  // namespace mate::memory
