#include "mate/nn/tensor.hpp"

#include "mate/errors.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

namespace mate::nn {

Tensor::Tensor(std::vector<std::uint64_t> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
  if (element_count() != values.size()) {
    throw UsageError("tensor: shape product " + std::to_string(element_count()) + " != value count " +
                     std::to_string(values.size()));
  }
}

std::uint64_t Tensor::element_count() const {
  return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
}

Tensor Tensor::from_matrix(const Matrix& m) {
  std::vector<double> v(m.data(), m.data() + m.size());
  return Tensor({static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())}, std::move(v));
}

Matrix Tensor::to_matrix() const {
  Eigen::Index rows = 1;
  Eigen::Index cols = 1;
  if (shape.size() == 1) {
    cols = static_cast<Eigen::Index>(shape[0]);
  } else if (shape.size() == 2) {
    rows = static_cast<Eigen::Index>(shape[0]);
    cols = static_cast<Eigen::Index>(shape[1]);
  } else if (!shape.empty()) {
    throw UsageError("tensor: rank " + std::to_string(shape.size()) + " cannot be viewed as a matrix");
  }
  Matrix m(rows, cols);
  std::copy(values.begin(), values.end(), m.data());
  return m;
}

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::identity;
  if (name == "tanh") return Activation::tanh;
  if (name == "gelu") return Activation::gelu;
  if (name == "relu") return Activation::relu;
  if (name == "softplus") return Activation::softplus;
  throw ConfigError("unknown activation '" + std::string(name) + "' (expected tanh, gelu, relu, softplus, identity)");
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::gelu: return "gelu";
    case Activation::relu: return "relu";
    case Activation::softplus: return "softplus";
  }
  return "identity";
}

Matrix glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix w(static_cast<Eigen::Index>(fan_in), static_cast<Eigen::Index>(fan_out));
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = dist(rng);
  return w;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

Segments Segments::single(std::size_t length) {
  Segments s;
  s.offsets_.push_back(length);
  return s;
}

Segments Segments::uniform(std::size_t count, std::size_t length) {
  Segments s;
  for (std::size_t i = 0; i < count; ++i) s.offsets_.push_back(s.offsets_.back() + length);
  return s;
}

Segments Segments::from_lengths(std::span<const std::size_t> lengths) {
  Segments s;
  for (std::size_t l : lengths) s.offsets_.push_back(s.offsets_.back() + l);
  return s;
}

std::size_t Segments::max_length() const {
  std::size_t m = 0;
  for (std::size_t i = 0; i < count(); ++i) m = std::max(m, length(i));
  return m;
}

}  // namespace mate::nn
