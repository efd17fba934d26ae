#include "mate/nn/graph.hpp"

#include "mate/errors.hpp"

#include <cmath>
#include <string>
#include <unordered_map>

namespace mate::nn {
namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kDegenerateNorm = 1e-12;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double act_value(Activation a, double x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::tanh: return std::tanh(x);
    case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::softplus: return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
  }
  return x;
}

double act_slope(Activation a, double x, double y) {
  switch (a) {
    case Activation::identity: return 1.0;
    case Activation::tanh: return 1.0 - y * y;
    case Activation::gelu:
      return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
    case Activation::relu: return x > 0.0 ? 1.0 : 0.0;
    case Activation::softplus: return 1.0 / (1.0 + std::exp(-x));
  }
  return 1.0;
}

Matrix apply_activation(const Matrix& x, Activation a) {
  if (a == Activation::identity) return x;
  if (a == Activation::tanh) return x.array().tanh().matrix();
  return x.unaryExpr([a](double v) { return act_value(a, v); });
}

Matrix sigmoid_of(const Matrix& x) {
  return x.unaryExpr([](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw UsageError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

void require_row(const Matrix& a, const Matrix& row, const char* op) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw UsageError(std::string(op) + ": expected a 1x" + std::to_string(a.cols()) + " row, got " +
                     std::to_string(row.rows()) + "x" + std::to_string(row.cols()));
  }
}

void require_matmul(const Matrix& a, const Matrix& b, const char* op) {
  if (a.cols() != b.rows()) {
    throw ConfigError(std::string(op) + ": inner dimensions differ (" + std::to_string(a.cols()) +
                      " vs " + std::to_string(b.rows()) + ")");
  }
}

Matrix concat_cols_of(const std::vector<const Matrix*>& parts) {
  if (parts.empty()) return Matrix();
  Eigen::Index rows = parts.front()->rows();
  Eigen::Index cols = 0;
  for (const Matrix* p : parts) {
    if (p->rows() != rows) throw UsageError("concat_cols: row counts differ");
    cols += p->cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const Matrix* p : parts) {
    out.middleCols(c, p->cols()) = *p;
    c += p->cols();
  }
  return out;
}

Matrix concat_rows_of(const std::vector<const Matrix*>& parts) {
  if (parts.empty()) return Matrix();
  Eigen::Index cols = parts.front()->cols();
  Eigen::Index rows = 0;
  for (const Matrix* p : parts) {
    if (p->cols() != cols) throw UsageError("concat_rows: column counts differ");
    rows += p->rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const Matrix* p : parts) {
    out.middleRows(r, p->rows()) = *p;
    r += p->rows();
  }
  return out;
}

Matrix gather_rows_of(const Matrix& a, std::span<const std::int64_t> rows) {
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::int64_t r = rows[i];
    if (r < 0) continue;
    if (r >= a.rows()) throw UsageError("gather_rows: row index out of range");
    out.row(static_cast<Eigen::Index>(i)) = a.row(r);
  }
  return out;
}

Matrix pick_cols_of(const Matrix& a, std::span<const std::int64_t> cols) {
  if (static_cast<Eigen::Index>(cols.size()) != a.rows()) {
    throw UsageError("pick_cols: need one column index per row");
  }
  Matrix out(a.rows(), 1);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const std::int64_t c = cols[static_cast<std::size_t>(i)];
    if (c < 0 || c >= a.cols()) throw UsageError("pick_cols: column index out of range");
    out(i, 0) = a(i, c);
  }
  return out;
}

Matrix row_normalize_of(const Matrix& a, double scale, Vector* norms) {
  Matrix out(a.rows(), a.cols());
  if (norms) norms->resize(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double n = a.row(i).norm();
    if (!(n >= kDegenerateNorm)) {
      throw DegenerateError("hypersphere projection of a vector with norm " + std::to_string(n) +
                            " (row " + std::to_string(i) + ")");
    }
    out.row(i) = a.row(i) * (scale / n);
    if (norms) (*norms)(i) = n;
  }
  return out;
}

void check_segments(const Matrix& a, const Segments& seg, const char* op) {
  if (static_cast<Eigen::Index>(seg.total()) != a.rows()) {
    throw UsageError(std::string(op) + ": segments cover " + std::to_string(seg.total()) +
                     " rows but input has " + std::to_string(a.rows()));
  }
}

// Left fold inside each segment, fixed order.
Matrix segment_cumsum_of(const Matrix& a, const Segments& seg) {
  check_segments(a, seg, "segment_cumsum");
  Matrix out(a.rows(), a.cols());
  for (std::size_t s = 0; s < seg.count(); ++s) {
    const auto b = static_cast<Eigen::Index>(seg.begin(s));
    const auto e = static_cast<Eigen::Index>(seg.end(s));
    if (b == e) continue;
    out.row(b) = a.row(b);
    for (Eigen::Index i = b + 1; i < e; ++i) out.row(i) = out.row(i - 1) + a.row(i);
  }
  return out;
}

struct LayerNormCache {
  Matrix xhat;
  Vector inv_std;
};

Matrix layer_norm_of(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache* cache) {
  require_row(x, gain, "layer_norm");
  require_row(x, bias, "layer_norm");
  const double n = static_cast<double>(x.cols());
  Matrix xhat(x.rows(), x.cols());
  Vector inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).sum() / n;
    const auto centered = (x.row(i).array() - mu).matrix();
    const double var = centered.squaredNorm() / n;
    inv_std(i) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(i) = centered * inv_std(i);
  }
  Matrix out = (xhat.array().rowwise() * gain.row(0).array()).rowwise() + bias.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

Matrix attention_of(const Matrix& q, const Matrix& k, const Matrix& v, const Segments& seg) {
  check_segments(q, seg, "causal_attention");
  if (k.rows() != q.rows() || v.rows() != q.rows() || k.cols() != q.cols()) {
    throw UsageError("causal_attention: q/k/v shapes disagree");
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Matrix out(q.rows(), v.cols());
  Vector w;
  for (std::size_t s = 0; s < seg.count(); ++s) {
    const auto b = static_cast<Eigen::Index>(seg.begin(s));
    const auto len = static_cast<Eigen::Index>(seg.length(s));
    for (Eigen::Index p = 0; p < len; ++p) {
      const Eigen::Index i = b + p;
      w.noalias() = (k.middleRows(b, p + 1) * q.row(i).transpose()) * inv;
      w.array() -= w.maxCoeff();
      w = w.array().exp();
      w /= w.sum();
      out.row(i).noalias() = w.transpose() * v.middleRows(b, p + 1);
    }
  }
  return out;
}

struct LstmCache {
  Matrix gates;   // activated i f g o, padded (steps * batch) x 4m
  Matrix cells;   // padded (steps * batch) x m
  Matrix hidden;  // padded (steps * batch) x m
  Eigen::Index batch = 0;
  Eigen::Index steps = 0;
};

Matrix lstm_of(const Matrix& xg, const Segments& seg, const Matrix& wh, LstmCache* cache) {
  check_segments(xg, seg, "lstm_sequence");
  const Eigen::Index m = wh.rows();
  if (wh.cols() != 4 * m || xg.cols() != 4 * m) {
    throw ConfigError("lstm_sequence: expected gate width " + std::to_string(4 * m) + ", got " +
                      std::to_string(xg.cols()));
  }
  const auto batch = static_cast<Eigen::Index>(seg.count());
  const auto steps = static_cast<Eigen::Index>(seg.max_length());
  Matrix h = Matrix::Zero(batch, m);
  Matrix c = Matrix::Zero(batch, m);
  Matrix pre(batch, 4 * m);
  Matrix act(batch, 4 * m);
  Matrix out(xg.rows(), m);
  if (cache) {
    cache->gates.resize(steps * batch, 4 * m);
    cache->cells.resize(steps * batch, m);
    cache->hidden.resize(steps * batch, m);
    cache->batch = batch;
    cache->steps = steps;
  }
  for (Eigen::Index t = 0; t < steps; ++t) {
    pre.setZero();
    for (Eigen::Index b = 0; b < batch; ++b) {
      if (t < static_cast<Eigen::Index>(seg.length(static_cast<std::size_t>(b)))) {
        pre.row(b) = xg.row(static_cast<Eigen::Index>(seg.begin(static_cast<std::size_t>(b))) + t);
      }
    }
    pre.noalias() += h * wh;
    act = sigmoid_of(pre);
    act.middleCols(2 * m, m) = pre.middleCols(2 * m, m).array().tanh();
    c = act.middleCols(m, m).cwiseProduct(c) + act.leftCols(m).cwiseProduct(act.middleCols(2 * m, m));
    h = act.rightCols(m).cwiseProduct(Matrix(c.array().tanh()));
    for (Eigen::Index b = 0; b < batch; ++b) {
      if (t < static_cast<Eigen::Index>(seg.length(static_cast<std::size_t>(b)))) {
        out.row(static_cast<Eigen::Index>(seg.begin(static_cast<std::size_t>(b))) + t) = h.row(b);
      }
    }
    if (cache) {
      cache->gates.middleRows(t * batch, batch) = act;
      cache->cells.middleRows(t * batch, batch) = c;
      cache->hidden.middleRows(t * batch, batch) = h;
    }
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- Eval

Matrix Eval::matmul(const Matrix& a, const Matrix& b) {
  require_matmul(a, b, "matmul");
  return a * b;
}

Matrix Eval::linear(const Matrix& x, const Parameter& weight, const Parameter& bias) {
  require_matmul(x, weight.value, weight.name.c_str());
  Matrix out = x * weight.value;
  out.rowwise() += bias.value.row(0);
  return out;
}

Matrix Eval::add_row(const Matrix& a, const Matrix& row) {
  require_row(a, row, "add_row");
  Matrix out = a;
  out.rowwise() += row.row(0);
  return out;
}

Matrix Eval::add_param_row(const Matrix& a, const Parameter& row) { return add_row(a, row.value); }

Matrix Eval::add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  return a + b;
}

Matrix Eval::sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  return a - b;
}

Matrix Eval::mul(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "mul");
  return a.cwiseProduct(b);
}

Matrix Eval::scale(const Matrix& a, double s) { return a * s; }
Matrix Eval::add_scalar(const Matrix& a, double s) { return a.array() + s; }
Matrix Eval::activate(const Matrix& a, Activation act) { return apply_activation(a, act); }
Matrix Eval::sigmoid(const Matrix& a) { return sigmoid_of(a); }
Matrix Eval::exp(const Matrix& a) { return a.array().exp(); }
Matrix Eval::square(const Matrix& a) { return a.array().square(); }

Matrix Eval::minimum(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "minimum");
  return a.cwiseMin(b);
}

Matrix Eval::concat_cols(const std::vector<Matrix>& parts) {
  std::vector<const Matrix*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  return concat_cols_of(ptrs);
}

Matrix Eval::concat_rows(const std::vector<Matrix>& parts) {
  std::vector<const Matrix*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  return concat_rows_of(ptrs);
}

Matrix Eval::slice_cols(const Matrix& a, std::size_t start, std::size_t count) {
  if (start + count > static_cast<std::size_t>(a.cols())) throw UsageError("slice_cols: out of range");
  return a.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count));
}

Matrix Eval::gather_rows(const Matrix& a, std::span<const std::int64_t> rows) {
  return gather_rows_of(a, rows);
}

Matrix Eval::param_rows(const Parameter& p, std::span<const std::int64_t> rows) {
  return gather_rows_of(p.value, rows);
}

Matrix Eval::pick_cols(const Matrix& a, std::span<const std::int64_t> cols) { return pick_cols_of(a, cols); }
Matrix Eval::row_sum(const Matrix& a) { return a.rowwise().sum(); }

Matrix Eval::sum(const Matrix& a) {
  Matrix out(1, 1);
  out(0, 0) = a.sum();
  return out;
}

Matrix Eval::mean(const Matrix& a) {
  Matrix out(1, 1);
  out(0, 0) = a.size() ? a.sum() / static_cast<double>(a.size()) : 0.0;
  return out;
}

Matrix Eval::row_normalize(const Matrix& a, double s) { return row_normalize_of(a, s, nullptr); }
Matrix Eval::segment_cumsum(const Matrix& a, const Segments& seg) { return segment_cumsum_of(a, seg); }

Matrix Eval::layer_norm(const Matrix& a, const Parameter& gain, const Parameter& bias) {
  return layer_norm_of(a, gain.value, bias.value, nullptr);
}

Matrix Eval::causal_attention(const Matrix& q, const Matrix& k, const Matrix& v, const Segments& seg) {
  return attention_of(q, k, v, seg);
}

Matrix Eval::lstm_sequence(const Matrix& gates_in, const Segments& seg, const Parameter& recurrent) {
  return lstm_of(gates_in, seg, recurrent.value, nullptr);
}

// ---------------------------------------------------------------- Tape

const Matrix& Tape::val(std::int32_t id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.external ? *n.external : n.value;
}

const Matrix& Tape::value(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw UsageError("invalid tape variable");
  return val(v.id);
}

Tape::Var Tape::push(Matrix value, std::vector<std::int32_t> inputs, const char* op, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (std::int32_t in : inputs) n.needs_grad = n.needs_grad || nodes_[static_cast<std::size_t>(in)].needs_grad;
  if (n.needs_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename Expr>
void Tape::accumulate(std::int32_t id, const Expr& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Tape::Var Tape::input(Matrix v) { return push(std::move(v), {}, "input", nullptr); }

Tape::Var Tape::param(const Parameter& p) {
  Node n;
  n.external = &p.value;
  n.param = &p;
  n.needs_grad = true;
  n.op = "param";
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tape::Var Tape::detach(Var a) { return push(val(a.id), {}, "detach", nullptr); }

Tape::Var Tape::matmul(Var a, Var b) {
  require_matmul(val(a.id), val(b.id), "matmul");
  Matrix out = val(a.id) * val(b.id);
  return push(std::move(out), {a.id, b.id}, "matmul", [a, b](Tape& t, std::int32_t self) {
    const Matrix& g = t.gout(self);
    if (t.wants(a.id)) t.accumulate(a.id, g * t.val(b.id).transpose());
    if (t.wants(b.id)) t.accumulate(b.id, t.val(a.id).transpose() * g);
  });
}

Tape::Var Tape::linear(Var x, const Parameter& weight, const Parameter& bias) {
  require_matmul(val(x.id), weight.value, weight.name.c_str());
  require_row(Matrix(1, weight.value.cols()), bias.value, bias.name.c_str());
  Var w = param(weight);
  Var b = param(bias);
  Matrix out = val(x.id) * weight.value;
  out.rowwise() += bias.value.row(0);
  return push(std::move(out), {x.id, w.id, b.id}, "linear", [x, w, b](Tape& t, std::int32_t self) {
    const Matrix& g = t.gout(self);
    if (t.wants(x.id)) t.accumulate(x.id, g * t.val(w.id).transpose());
    t.accumulate(w.id, t.val(x.id).transpose() * g);
    t.accumulate(b.id, g.colwise().sum());
  });
}

Tape::Var Tape::add_row(Var a, Var row) {
  require_row(val(a.id), val(row.id), "add_row");
  Matrix out = val(a.id);
  out.rowwise() += val(row.id).row(0);
  return push(std::move(out), {a.id, row.id}, "add_row", [a, row](Tape& t, std::int32_t self) {
    const Matrix& g = t.gout(self);
    t.accumulate(a.id, g);
    if (t.wants(row.id)) t.accumulate(row.id, g.colwise().sum());
  });
}

Tape::Var Tape::add_param_row(Var a, const Parameter& row) { return add_row(a, param(row)); }

Tape::Var Tape::add(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "add");
  return push(val(a.id) + val(b.id), {a.id, b.id}, "add", [a, b](Tape& t, std::int32_t self) {
    t.accumulate(a.id, t.gout(self));
    t.accumulate(b.id, t.gout(self));
  });
}

Tape::Var Tape::sub(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "sub");
  return push(val(a.id) - val(b.id), {a.id, b.id}, "sub", [a, b](Tape& t, std::int32_t self) {
    t.accumulate(a.id, t.gout(self));
    if (t.wants(b.id)) t.accumulate(b.id, -t.gout(self));
  });
}

Tape::Var Tape::mul(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "mul");
  return push(val(a.id).cwiseProduct(val(b.id)), {a.id, b.id}, "mul", [a, b](Tape& t, std::int32_t self) {
    const Matrix& g = t.gout(self);
    if (t.wants(a.id)) t.accumulate(a.id, g.cwiseProduct(t.val(b.id)));
    if (t.wants(b.id)) t.accumulate(b.id, g.cwiseProduct(t.val(a.id)));
  });
}

Tape::Var Tape::scale(Var a, double s) {
  return push(val(a.id) * s, {a.id}, "scale", [a, s](Tape& t, std::int32_t self) {
    t.accumulate(a.id, t.gout(self) * s);
  });
}

Tape::Var Tape::add_scalar(Var a, double s) {
  return push(val(a.id).array() + s, {a.id}, "add_scalar", [a](Tape& t, std::int32_t self) {
    t.accumulate(a.id, t.gout(self));
  });
}

Tape::Var Tape::activate(Var a, Activation act) {
  return push(apply_activation(val(a.id), act), {a.id}, "activate", [a, act](Tape& t, std::int32_t self) {
    const Matrix& x = t.val(a.id);
    const Matrix& y = t.val(self);
    Matrix d(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) d.data()[i] = act_slope(act, x.data()[i], y.data()[i]);
    t.accumulate(a.id, t.gout(self).cwiseProduct(d));
  });
}

Tape::Var Tape::sigmoid(Var a) {
  return push(sigmoid_of(val(a.id)), {a.id}, "sigmoid", [a](Tape& t, std::int32_t self) {
    const Matrix& y = t.val(self);
    t.accumulate(a.id, t.gout(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Tape::Var Tape::exp(Var a) {
  return push(val(a.id).array().exp(), {a.id}, "exp", [a](Tape& t, std::int32_t self) {
    t.accumulate(a.id, t.gout(self).cwiseProduct(t.val(self)));
  });
}

Tape::Var Tape::square(Var a) {
  return push(val(a.id).array().square(), {a.id}, "square", [a](Tape& t, std::int32_t self) {
    t.accumulate(a.id, t.gout(self).cwiseProduct(t.val(a.id)) * 2.0);
  });
}

Tape::Var Tape::minimum(Var a, Var b) {
  require_same_shape(val(a.id), val(b.id), "minimum");
  return push(val(a.id).cwiseMin(val(b.id)), {a.id, b.id}, "minimum", [a, b](Tape& t, std::int32_t self) {
    const Matrix& g = t.gout(self);
    const auto take_a = (t.val(a.id).array() <= t.val(b.id).array()).cast<double>();
    if (t.wants(a.id)) t.accumulate(a.id, (g.array() * take_a).matrix());
    if (t.wants(b.id)) t.accumulate(b.id, (g.array() * (1.0 - take_a)).matrix());
  });
}

Tape::Var Tape::concat_cols(const std::vector<Var>& parts) {
  std::vector<const Matrix*> ptrs;
  std::vector<std::int32_t> ids;
  for (Var p : parts) {
    ptrs.push_back(&val(p.id));
    ids.push_back(p.id);
  }
  Matrix out = concat_cols_of(ptrs);
  return push(std::move(out), ids, "concat_cols", [ids](Tape& t, std::int32_t self) {
    const Matrix& g = t.gout(self);
    Eigen::Index c = 0;
    for (std::int32_t id : ids) {
      const Eigen::Index w = t.val(id).cols();
      if (t.wants(id)) t.accumulate(id, g.middleCols(c, w));
      c += w;
    }
  });
}

Tape::Var Tape::concat_rows(const std::vector<Var>& parts) {
  std::vector<const Matrix*> ptrs;
  std::vector<std::int32_t> ids;
  for (Var p : parts) {
    ptrs.push_back(&val(p.id));
    ids.push_back(p.id);
  }
  Matrix out = concat_rows_of(ptrs);
  return push(std::move(out), ids, "concat_rows", [ids](Tape& t, std::int32_t self) {
    const Matrix& g = t.gout(self);
    Eigen::Index r = 0;
    for (std::int32_t id : ids) {
      const Eigen::Index h = t.val(id).rows();
      if (t.wants(id)) t.accumulate(id, g.middleRows(r, h));
      r += h;
    }
  });
}

Tape::Var Tape::slice_cols(Var a, std::size_t start, std::size_t count) {
  const Matrix& x = val(a.id);
  if (start + count > static_cast<std::size_t>(x.cols())) throw UsageError("slice_cols: out of range");
  const auto s = static_cast<Eigen::Index>(start);
  const auto c = static_cast<Eigen::Index>(count);
  return push(x.middleCols(s, c), {a.id}, "slice_cols", [a, s, c](Tape& t, std::int32_t self) {
    const Matrix& x = t.val(a.id);
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.middleCols(s, c) = t.gout(self);
    t.accumulate(a.id, g);
  });
}

Tape::Var Tape::gather_rows(Var a, std::span<const std::int64_t> rows) {
  std::vector<std::int64_t> idx(rows.begin(), rows.end());
  Matrix out = gather_rows_of(val(a.id), idx);
  return push(std::move(out), {a.id}, "gather_rows", [a, idx = std::move(idx)](Tape& t, std::int32_t self) {
    const Matrix& x = t.val(a.id);
    const Matrix& g = t.gout(self);
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] >= 0) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    }
    t.accumulate(a.id, d);
  });
}

Tape::Var Tape::param_rows(const Parameter& p, std::span<const std::int64_t> rows) {
  return gather_rows(param(p), rows);
}

Tape::Var Tape::pick_cols(Var a, std::span<const std::int64_t> cols) {
  std::vector<std::int64_t> idx(cols.begin(), cols.end());
  Matrix out = pick_cols_of(val(a.id), idx);
  return push(std::move(out), {a.id}, "pick_cols", [a, idx = std::move(idx)](Tape& t, std::int32_t self) {
    const Matrix& x = t.val(a.id);
    const Matrix& g = t.gout(self);
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d(static_cast<Eigen::Index>(i), idx[i]) = g(static_cast<Eigen::Index>(i), 0);
    t.accumulate(a.id, d);
  });
}

Tape::Var Tape::row_sum(Var a) {
  return push(val(a.id).rowwise().sum(), {a.id}, "row_sum", [a](Tape& t, std::int32_t self) {
    const Matrix& x = t.val(a.id);
    Matrix d = t.gout(self).replicate(1, x.cols());
    t.accumulate(a.id, d);
  });
}

Tape::Var Tape::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = val(a.id).sum();
  return push(std::move(out), {a.id}, "sum", [a](Tape& t, std::int32_t self) {
    const Matrix& x = t.val(a.id);
    t.accumulate(a.id, Matrix::Constant(x.rows(), x.cols(), t.gout(self)(0, 0)));
  });
}

Tape::Var Tape::mean(Var a) {
  const Matrix& x = val(a.id);
  const double n = static_cast<double>(x.size());
  Matrix out(1, 1);
  out(0, 0) = x.size() ? x.sum() / n : 0.0;
  return push(std::move(out), {a.id}, "mean", [a, n](Tape& t, std::int32_t self) {
    const Matrix& x = t.val(a.id);
    t.accumulate(a.id, Matrix::Constant(x.rows(), x.cols(), t.gout(self)(0, 0) / n));
  });
}

Tape::Var Tape::row_normalize(Var a, double scale) {
  Vector norms;
  Matrix out = row_normalize_of(val(a.id), scale, &norms);
  return push(std::move(out), {a.id}, "row_normalize",
              [a, scale, norms = std::move(norms)](Tape& t, std::int32_t self) {
                const Matrix& y = t.val(self);
                const Matrix& g = t.gout(self);
                Matrix d(y.rows(), y.cols());
                for (Eigen::Index i = 0; i < y.rows(); ++i) {
                  // y = s * u, u = x / |x|;  dx = (s/|x|) (g - u (u.g))
                  const auto u = y.row(i) / scale;
                  const double ug = u.dot(g.row(i));
                  d.row(i) = (g.row(i) - u * ug) * (scale / norms(i));
                }
                t.accumulate(a.id, d);
              });
}

Tape::Var Tape::segment_cumsum(Var a, const Segments& seg) {
  Matrix out = segment_cumsum_of(val(a.id), seg);
  return push(std::move(out), {a.id}, "segment_cumsum", [a, seg](Tape& t, std::int32_t self) {
    const Matrix& g = t.gout(self);
    Matrix d(g.rows(), g.cols());
    for (std::size_t s = 0; s < seg.count(); ++s) {
      const auto b = static_cast<Eigen::Index>(seg.begin(s));
      const auto e = static_cast<Eigen::Index>(seg.end(s));
      if (b == e) continue;
      d.row(e - 1) = g.row(e - 1);
      for (Eigen::Index i = e - 2; i >= b; --i) d.row(i) = d.row(i + 1) + g.row(i);
    }
    t.accumulate(a.id, d);
  });
}

Tape::Var Tape::layer_norm(Var a, const Parameter& gain, const Parameter& bias) {
  Var gv = param(gain);
  Var bv = param(bias);
  LayerNormCache cache;
  Matrix out = layer_norm_of(val(a.id), gain.value, bias.value, &cache);
  return push(std::move(out), {a.id, gv.id, bv.id}, "layer_norm",
              [a, gv, bv, cache = std::move(cache)](Tape& t, std::int32_t self) {
                const Matrix& g = t.gout(self);
                const Matrix& gamma = t.val(gv.id);
                t.accumulate(gv.id, g.cwiseProduct(cache.xhat).colwise().sum());
                t.accumulate(bv.id, g.colwise().sum());
                if (!t.wants(a.id)) return;
                const double n = static_cast<double>(g.cols());
                Matrix d(g.rows(), g.cols());
                for (Eigen::Index i = 0; i < g.rows(); ++i) {
                  const Eigen::RowVectorXd dxhat = g.row(i).cwiseProduct(gamma.row(0));
                  const double mean_d = dxhat.sum() / n;
                  const double mean_dx = dxhat.dot(cache.xhat.row(i)) / n;
                  d.row(i) = (dxhat.array() - mean_d - cache.xhat.row(i).array() * mean_dx).matrix() *
                             cache.inv_std(i);
                }
                t.accumulate(a.id, d);
              });
}

Tape::Var Tape::causal_attention(Var q, Var k, Var v, const Segments& seg) {
  Matrix out = attention_of(val(q.id), val(k.id), val(v.id), seg);
  return push(std::move(out), {q.id, k.id, v.id}, "causal_attention", [q, k, v, seg](Tape& t, std::int32_t self) {
    const Matrix& Q = t.val(q.id);
    const Matrix& K = t.val(k.id);
    const Matrix& V = t.val(v.id);
    const Matrix& G = t.gout(self);
    const double inv = 1.0 / std::sqrt(static_cast<double>(Q.cols()));
    Matrix dQ = Matrix::Zero(Q.rows(), Q.cols());
    Matrix dK = Matrix::Zero(K.rows(), K.cols());
    Matrix dV = Matrix::Zero(V.rows(), V.cols());
    Vector w;
    Vector dw;
    for (std::size_t s = 0; s < seg.count(); ++s) {
      const auto b = static_cast<Eigen::Index>(seg.begin(s));
      const auto len = static_cast<Eigen::Index>(seg.length(s));
      for (Eigen::Index p = 0; p < len; ++p) {
        const Eigen::Index i = b + p;
        const auto Kb = K.middleRows(b, p + 1);
        const auto Vb = V.middleRows(b, p + 1);
        w.noalias() = (Kb * Q.row(i).transpose()) * inv;
        w.array() -= w.maxCoeff();
        w = w.array().exp();
        w /= w.sum();
        dV.middleRows(b, p + 1).noalias() += w * G.row(i);
        dw.noalias() = Vb * G.row(i).transpose();
        const double wdw = w.dot(dw);
        dw = (w.array() * (dw.array() - wdw)).matrix() * inv;
        dQ.row(i).noalias() += dw.transpose() * Kb;
        dK.middleRows(b, p + 1).noalias() += dw * Q.row(i);
      }
    }
    t.accumulate(q.id, dQ);
    t.accumulate(k.id, dK);
    t.accumulate(v.id, dV);
  });
}

Tape::Var Tape::lstm_sequence(Var gates_in, const Segments& seg, const Parameter& recurrent) {
  Var wh = param(recurrent);
  LstmCache cache;
  Matrix out = lstm_of(val(gates_in.id), seg, recurrent.value, &cache);
  return push(std::move(out), {gates_in.id, wh.id}, "lstm_sequence",
              [gates_in, wh, seg, cache = std::move(cache)](Tape& t, std::int32_t self) {
                const Matrix& G = t.gout(self);
                const Matrix& W = t.val(wh.id);
                const Eigen::Index m = W.rows();
                const Eigen::Index batch = cache.batch;
                Matrix dh_next = Matrix::Zero(batch, m);
                Matrix dc_next = Matrix::Zero(batch, m);
                Matrix dxg = Matrix::Zero(G.rows(), 4 * m);
                Matrix dw = Matrix::Zero(m, 4 * m);
                Matrix dpre(batch, 4 * m);
                const Matrix zeros = Matrix::Zero(batch, m);
                for (Eigen::Index step = cache.steps - 1; step >= 0; --step) {
                  const auto a = cache.gates.middleRows(step * batch, batch);
                  const auto c = cache.cells.middleRows(step * batch, batch);
                  const Matrix c_prev = step > 0 ? Matrix(cache.cells.middleRows((step - 1) * batch, batch)) : zeros;
                  const Matrix h_prev = step > 0 ? Matrix(cache.hidden.middleRows((step - 1) * batch, batch)) : zeros;
                  Matrix dh = dh_next;
                  for (Eigen::Index b = 0; b < batch; ++b) {
                    if (step < static_cast<Eigen::Index>(seg.length(static_cast<std::size_t>(b)))) {
                      dh.row(b) += G.row(static_cast<Eigen::Index>(seg.begin(static_cast<std::size_t>(b))) + step);
                    }
                  }
                  const Matrix tc = c.array().tanh();
                  const auto i = a.leftCols(m).array();
                  const auto f = a.middleCols(m, m).array();
                  const auto g = a.middleCols(2 * m, m).array();
                  const auto o = a.rightCols(m).array();
                  const Matrix dc = dc_next.array() + dh.array() * o * (1.0 - tc.array().square());
                  dpre.leftCols(m) = (dc.array() * g * i * (1.0 - i)).matrix();
                  dpre.middleCols(m, m) = (dc.array() * c_prev.array() * f * (1.0 - f)).matrix();
                  dpre.middleCols(2 * m, m) = (dc.array() * i * (1.0 - g.square())).matrix();
                  dpre.rightCols(m) = (dh.array() * tc.array() * o * (1.0 - o)).matrix();
                  dc_next = (dc.array() * f).matrix();
                  for (Eigen::Index b = 0; b < batch; ++b) {
                    if (step < static_cast<Eigen::Index>(seg.length(static_cast<std::size_t>(b)))) {
                      dxg.row(static_cast<Eigen::Index>(seg.begin(static_cast<std::size_t>(b))) + step) = dpre.row(b);
                    }
                  }
                  dw.noalias() += h_prev.transpose() * dpre;
                  dh_next.noalias() = dpre * W.transpose();
                }
                t.accumulate(gates_in.id, dxg);
                t.accumulate(wh.id, dw);
              });
}

void Tape::sweep(std::int32_t from) {
  for (std::int32_t i = from; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backward || n.grad.size() == 0) continue;
    if (!n.grad.allFinite()) {
      throw NumericError(std::string("non-finite gradient at tape node ") + std::to_string(i) + " (" + n.op + ")");
    }
    n.backward(*this, i);
  }
  for (const Node& n : nodes_) {
    if (n.param && n.grad.size() && !n.grad.allFinite()) {
      throw NumericError("non-finite gradient for parameter " + n.param->name);
    }
  }
}

void Tape::backward(Var loss) {
  const Matrix& l = value(loss);
  if (l.rows() != 1 || l.cols() != 1) {
    throw UsageError("backward: loss must be a scalar, got " + std::to_string(l.rows()) + "x" +
                     std::to_string(l.cols()));
  }
  backward(loss, Matrix::Ones(1, 1));
}

void Tape::backward(Var out, const Matrix& seed) {
  require_same_shape(value(out), seed, "backward seed");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[static_cast<std::size_t>(out.id)].needs_grad) return;
  nodes_[static_cast<std::size_t>(out.id)].grad = seed;
  sweep(out.id);
}

const Matrix* Tape::grad_of(Var v) const {
  const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
  return n.grad.size() ? &n.grad : nullptr;
}

Gradients Tape::gradients(std::span<Parameter* const> params) const {
  std::unordered_map<const Parameter*, std::size_t> index;
  Gradients out;
  out.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    index.emplace(params[i], i);
    out.push_back(Matrix::Zero(params[i]->value.rows(), params[i]->value.cols()));
  }
  for (const Node& n : nodes_) {
    if (!n.param || n.grad.size() == 0) continue;
    auto it = index.find(n.param);
    if (it != index.end()) out[it->second] += n.grad;
  }
  return out;
}

Matrix hypersphere_project(const Matrix& v, const Matrix& offset, double scale) {
  Eval g;
  return g.row_normalize(g.add_row(v, offset), scale);
}

}  // namespace mate::nn
