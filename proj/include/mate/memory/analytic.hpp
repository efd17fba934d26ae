#pragma once

#include "mate/memory/encoder.hpp"

#include <cstdint>
#include <span>
#include <string>

namespace mate::memory {

// Per-transition Gaussian evidence (mean, variance) mapped to (mean / var, 1 / var).
// Summing these over a history gives the precision-weighted posterior mean and the precision.
// DomainError unless variance > 0.
Vector gaussian_analytic_encoder(double mean, double variance);

// Appends a zero coordinate, adds the offset (0, ..., 0, 1) and projects onto the sphere of radius `scale`.
Vector normalize_augmented(const Vector& raw, double scale);

// Inverse of normalize_augmented: divides the leading coordinates by the last one.
// DegenerateError when the last coordinate of normalized / scale is <= 1e-12.
Vector recover_unnormalized(std::span<const double> normalized, double scale);

// Multisets are stored one element per row; row order carries no meaning.
bool same_multiset(const Matrix& a, const Matrix& b);

// Sum of single-layer embeddings tanh(A x + b) over the rows of `set` (zero for an empty set).
Vector multiset_embedding(const MemoryEncoder& encoder, const Matrix& set);

struct InjectivityConfig {
  std::size_t input_dim = 2;
  std::size_t horizon = 4;
  std::size_t memory_dim = 0;  // 0 selects 2 * input_dim * horizon + 1
  std::size_t pairs = 10000;
  std::uint64_t seed = 0;
  double threshold = 1e-8;
};

struct InjectivityReport {
  double min_distance = 0.0;
  std::size_t collisions = 0;
  std::size_t pairs = 0;
  std::size_t memory_dim = 0;
  bool guarantee = true;  // false when memory_dim != 2nT + 1
  std::string warning;
};

// Builds a single-layer tanh encoder with Gaussian (A, b) and compares the raw-sum embeddings of
// random pairs of distinct multisets (sizes up to the horizon, elements in [-1, 1]^n).
InjectivityReport injectivity_probe(const InjectivityConfig& config);

// The single-layer tanh encoder used by the probe, with A and b drawn from N(0, 1).
MemoryEncoder probe_encoder(std::size_t input_dim, std::size_t horizon, std::size_t memory_dim, nn::Rng& rng);

}  // namespace mate::memory
