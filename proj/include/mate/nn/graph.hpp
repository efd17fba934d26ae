#pragma once

#include "mate/nn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

// Two interchangeable execution backends with the same op surface:
//   Eval  - immediate evaluation on matrices, nothing recorded.
//   Tape  - reverse-mode recording; one tape per training step.
// Network code is written once as templates over the backend.

namespace mate::nn {

class Eval {
 public:
  using Value = Matrix;

  Value input(Matrix v) { return v; }
  Value param(const Parameter& p) { return p.value; }
  const Matrix& value(const Value& v) const { return v; }

  Value matmul(const Value& a, const Value& b);
  Value linear(const Value& x, const Parameter& weight, const Parameter& bias);
  Value add_row(const Value& a, const Value& row);
  Value add_param_row(const Value& a, const Parameter& row);
  Value add(const Value& a, const Value& b);
  Value sub(const Value& a, const Value& b);
  Value mul(const Value& a, const Value& b);
  Value scale(const Value& a, double s);
  Value add_scalar(const Value& a, double s);
  Value activate(const Value& a, Activation act);
  Value sigmoid(const Value& a);
  Value exp(const Value& a);
  Value square(const Value& a);
  Value minimum(const Value& a, const Value& b);
  Value concat_cols(const std::vector<Value>& parts);
  Value concat_rows(const std::vector<Value>& parts);
  Value slice_cols(const Value& a, std::size_t start, std::size_t count);
  Value gather_rows(const Value& a, std::span<const std::int64_t> rows);
  Value param_rows(const Parameter& p, std::span<const std::int64_t> rows);
  Value pick_cols(const Value& a, std::span<const std::int64_t> cols);
  Value row_sum(const Value& a);
  Value sum(const Value& a);
  Value mean(const Value& a);
  Value row_normalize(const Value& a, double scale);
  Value segment_cumsum(const Value& a, const Segments& seg);
  Value layer_norm(const Value& a, const Parameter& gain, const Parameter& bias);
  Value causal_attention(const Value& q, const Value& k, const Value& v, const Segments& seg);
  Value lstm_sequence(const Value& gates_in, const Segments& seg, const Parameter& recurrent);
  Value detach(const Value& a) { return a; }
};

class Tape {
 public:
  struct Var {
    std::int32_t id = -1;
  };
  using Value = Var;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var input(Matrix v);
  // Leaf referencing the parameter's storage; the parameter must outlive the tape.
  Var param(const Parameter& p);
  const Matrix& value(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  Var matmul(Var a, Var b);
  Var linear(Var x, const Parameter& weight, const Parameter& bias);
  Var add_row(Var a, Var row);
  Var add_param_row(Var a, const Parameter& row);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var add_scalar(Var a, double s);
  Var activate(Var a, Activation act);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var square(Var a);
  Var minimum(Var a, Var b);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_cols(Var a, std::size_t start, std::size_t count);
  Var gather_rows(Var a, std::span<const std::int64_t> rows);
  Var param_rows(const Parameter& p, std::span<const std::int64_t> rows);
  Var pick_cols(Var a, std::span<const std::int64_t> cols);
  Var row_sum(Var a);
  Var sum(Var a);
  Var mean(Var a);
  Var row_normalize(Var a, double scale);
  Var segment_cumsum(Var a, const Segments& seg);
  Var layer_norm(Var a, const Parameter& gain, const Parameter& bias);
  Var causal_attention(Var q, Var k, Var v, const Segments& seg);
  // LSTM recurrence over each segment; gates_in holds x W_x + b (N x 4m, gate order i f g o).
  // Returns the hidden state at every row (N x m).
  Var lstm_sequence(Var gates_in, const Segments& seg, const Parameter& recurrent);
  Var detach(Var a);

  // Reverse sweep from a 1x1 loss. Throws UsageError for a non-scalar loss and
  // NumericError naming the node whose backward produced a non-finite gradient.
  void backward(Var loss);
  // Reverse sweep from an arbitrary node with an explicit upstream gradient.
  void backward(Var out, const Matrix& seed);

  // One gradient per parameter, same shape; zero for parameters the loss does not reach.
  Gradients gradients(std::span<Parameter* const> params) const;
  const Matrix* grad_of(Var v) const;

 private:
  using BackwardFn = std::function<void(Tape&, std::int32_t self)>;
  struct Node {
    Matrix value;
    const Matrix* external = nullptr;
    const Parameter* param = nullptr;
    Matrix grad;
    bool needs_grad = false;
    const char* op = "input";
    std::vector<std::int32_t> inputs;
    BackwardFn backward;
  };

  Var push(Matrix value, std::vector<std::int32_t> inputs, const char* op, BackwardFn fn);
  const Matrix& val(std::int32_t id) const;
  const Matrix& gout(std::int32_t id) const { return nodes_[id].grad; }
  bool wants(std::int32_t id) const { return nodes_[id].needs_grad; }
  template <typename Expr>
  void accumulate(std::int32_t id, const Expr& g);
  void sweep(std::int32_t from);

  std::vector<Node> nodes_;
};

// Convenience: a standalone hypersphere projection in 64-bit.
// Returns scale * (v + offset) / ||v + offset|| row-wise; DegenerateError below 1e-12.
Matrix hypersphere_project(const Matrix& v, const Matrix& offset, double scale);

}  // namespace mate::nn
