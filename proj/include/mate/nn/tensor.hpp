#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mate::nn {

// Row-major so that one row is one position / sample.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

// Shape-tagged flat buffer used at I/O boundaries (checkpoints, replay persistence).
struct Tensor {
  std::vector<std::uint64_t> shape;
  std::vector<double> values;

  Tensor() = default;
  Tensor(std::vector<std::uint64_t> shape, std::vector<double> values);

  std::uint64_t element_count() const;
  static Tensor from_matrix(const Matrix& m);
  // Rank-1 tensors become a single row.
  Matrix to_matrix() const;

  bool operator==(const Tensor&) const = default;
};

// A trainable array. Gradients live on the tape, not here.
struct Parameter {
  std::string name;
  Matrix value;

  Parameter() = default;
  Parameter(std::string name, Matrix value) : name(std::move(name)), value(std::move(value)) {}
};

using ParamList = std::vector<Parameter*>;
using Gradients = std::vector<Matrix>;

enum class Activation { identity, tanh, gelu, relu, softplus };

Activation parse_activation(std::string_view name);
std::string_view to_string(Activation a);

// Uniform in +/- sqrt(6 / (fan_in + fan_out)).
Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

bool all_finite(const Matrix& m);

// Row ranges of episodes packed back to back into one matrix.
class Segments {
 public:
  Segments() : offsets_{0} {}
  static Segments single(std::size_t length);
  static Segments uniform(std::size_t count, std::size_t length);
  static Segments from_lengths(std::span<const std::size_t> lengths);

  std::size_t count() const { return offsets_.size() - 1; }
  std::size_t begin(std::size_t i) const { return offsets_[i]; }
  std::size_t end(std::size_t i) const { return offsets_[i + 1]; }
  std::size_t length(std::size_t i) const { return end(i) - begin(i); }
  std::size_t total() const { return offsets_.back(); }
  std::size_t max_length() const;

 private:
  std::vector<std::size_t> offsets_;
};

}  // namespace mate::nn
