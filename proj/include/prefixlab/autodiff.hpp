#pragma once

// Reverse-mode differentiation over a small closed set of matrix primitives.
//
// A Tape records every primitive application in topological order (inputs
// always precede outputs). `backward` walks the tape once in reverse and
// accumulates vector-Jacobian products; gradients for Param leaves are added
// into Param::grad.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "prefixlab/linalg.hpp"
#include "prefixlab/random.hpp"

namespace prefixlab {

struct Param {
  Matrix value;
  Matrix grad;
  bool trainable = true;

  Param() = default;
  explicit Param(Matrix v, bool is_trainable = true)
      : value(std::move(v)), grad(value.rows(), value.cols()), trainable(is_trainable) {}

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Matrix(value.rows(), value.cols());
    std::fill(grad.data().begin(), grad.data().end(), 0.0);
  }
};

inline void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->zero_grad();
}

inline double grad_norm(std::span<Param* const> params) {
  double s = 0.0;
  for (const Param* p : params) {
    if (!p->trainable) continue;
    for (double g : p->grad.data()) s += g * g;
  }
  return std::sqrt(s);
}

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

enum class OpKind : std::uint8_t {
  leaf,
  constant,
  matmul,
  transpose,
  add,
  scale,
  tanh,
  row_softmax,
  concat_rows,
  concat_cols,
  select_rows,
  slice_cols,
  reshape,
  detach,
  mse_loss,
  cross_entropy_rows,
  embed_lookup,
};

inline const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::leaf: return "leaf";
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::transpose: return "transpose";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::tanh: return "tanh";
    case OpKind::row_softmax: return "row_softmax";
    case OpKind::concat_rows: return "concat_rows";
    case OpKind::concat_cols: return "concat_cols";
    case OpKind::select_rows: return "select_rows";
    case OpKind::slice_cols: return "slice_cols";
    case OpKind::reshape: return "reshape";
    case OpKind::detach: return "detach";
    case OpKind::mse_loss: return "mse_loss";
    case OpKind::cross_entropy_rows: return "cross_entropy_rows";
    case OpKind::embed_lookup: return "embed_lookup";
  }
  return "?";
}

class Tape {
 public:
  struct Node {
    OpKind op = OpKind::constant;
    int a = -1;
    int b = -1;
    Matrix value;
    const Matrix* external = nullptr;  // leaves/constants may alias caller storage
    Matrix grad;
    bool needs_grad = false;
    Param* param = nullptr;
    double scalar = 0.0;
    std::size_t offset = 0;
    std::vector<int> index;
    std::vector<std::uint8_t> mask;
    Matrix aux;

    const Matrix& val() const { return external != nullptr ? *external : value; }
  };

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(int id) const { return nodes_.at(static_cast<std::size_t>(id)); }

  Var constant(Matrix m) {
    Node n;
    n.op = OpKind::constant;
    n.value = std::move(m);
    return push(std::move(n));
  }

  /// Aliases `m`; the caller keeps it alive and unchanged for the tape's lifetime.
  Var constant_ref(const Matrix& m) {
    Node n;
    n.op = OpKind::constant;
    n.external = &m;
    return push(std::move(n));
  }

  /// Trainable params become gradient-tracked leaves; frozen params (or any
  /// param on a no-grad tape) become constants.
  Var param(Param& p) {
    if (!grad_enabled_ || !p.trainable) return constant_ref(p.value);
    Node n;
    n.op = OpKind::leaf;
    n.external = &p.value;
    n.param = &p;
    n.needs_grad = true;
    return push(std::move(n));
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, static_cast<int>(nodes_.size() - 1)};
  }

  const Matrix& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].val(); }
  const Matrix& grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].grad; }
  bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  /// Single reverse sweep from a 1x1 loss. Param gradients are accumulated.
  void backward(Var loss);

 private:
  void accumulate(int id, const Matrix& g);
  Matrix& grad_slot(int id);

  std::vector<Node> nodes_;
  bool grad_enabled_;
  bool backward_done_ = false;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

namespace detail {

inline Tape& same_tape(Var a, Var b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape != b.tape) {
    throw std::invalid_argument(std::string(op) + ": operands from different tapes");
  }
  return *a.tape;
}

inline Tape::Node make_node(Tape& t, OpKind op, Var a, Var b = {}) {
  Tape::Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.valid() ? b.id : -1;
  n.needs_grad = t.grad_enabled() && (t.needs_grad(a) || (b.valid() && t.needs_grad(b)));
  return n;
}

[[noreturn]] inline void shape_fail(const char* op, const Matrix& a, const Matrix& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.rows(), a.cols()) +
                   " and " + shape_str(b.rows(), b.cols()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives

inline Var matmul(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "matmul");
  if (a.cols() != b.rows()) detail::shape_fail("matmul", a.value(), b.value());
  auto n = detail::make_node(t, OpKind::matmul, a, b);
  n.value = matmul(a.value(), b.value());
  return t.push(std::move(n));
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  auto n = detail::make_node(t, OpKind::transpose, a);
  n.value = transpose(a.value());
  return t.push(std::move(n));
}

inline Var add(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "add");
  if (!a.value().same_shape(b.value())) detail::shape_fail("add", a.value(), b.value());
  auto n = detail::make_node(t, OpKind::add, a, b);
  n.value = a.value() + b.value();
  return t.push(std::move(n));
}

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  auto n = detail::make_node(t, OpKind::scale, a);
  n.scalar = s;
  n.value = s * a.value();
  return t.push(std::move(n));
}

inline Var tanh(Var a) {
  Tape& t = *a.tape;
  auto n = detail::make_node(t, OpKind::tanh, a);
  n.value = a.value();
  for (double& v : n.value.data()) v = std::tanh(v);
  return t.push(std::move(n));
}

/// Softmax along each row, stabilized by subtracting the row max. Entries with
/// mask 0 get weight exactly 0; every row must keep at least one entry.
inline Var row_softmax(Var a, std::vector<std::uint8_t> mask = {}) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  if (!mask.empty() && mask.size() != x.size()) {
    throw ShapeError("row_softmax: mask size " + std::to_string(mask.size()) + " for " +
                     shape_str(x.rows(), x.cols()));
  }
  auto n = detail::make_node(t, OpKind::row_softmax, a);
  n.value = Matrix(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (mask.empty() || mask[i * x.cols() + j]) {
        if (!std::isfinite(x(i, j))) throw NumericalError("row_softmax: non-finite score in row " + std::to_string(i));
        mx = std::max(mx, x(i, j));
      }
    }
    if (!std::isfinite(mx)) throw std::invalid_argument("row_softmax: row fully masked");
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      if (mask.empty() || mask[i * x.cols() + j]) {
        const double e = std::exp(x(i, j) - mx);
        n.value(i, j) = e;
        sum += e;
      }
    }
    for (std::size_t j = 0; j < x.cols(); ++j) n.value(i, j) /= sum;
  }
  n.mask = std::move(mask);
  return t.push(std::move(n));
}

inline Var concat_rows(Var top, Var bottom) {
  Tape& t = detail::same_tape(top, bottom, "concat_rows");
  if (top.rows() > 0 && bottom.rows() > 0 && top.cols() != bottom.cols()) {
    detail::shape_fail("concat_rows", top.value(), bottom.value());
  }
  auto n = detail::make_node(t, OpKind::concat_rows, top, bottom);
  n.value = stack_rows(top.value(), bottom.value());
  return t.push(std::move(n));
}

inline Var concat_cols(Var left, Var right) {
  Tape& t = detail::same_tape(left, right, "concat_cols");
  if (left.rows() != right.rows()) detail::shape_fail("concat_cols", left.value(), right.value());
  auto n = detail::make_node(t, OpKind::concat_cols, left, right);
  const Matrix& l = left.value();
  const Matrix& r = right.value();
  n.value = Matrix(l.rows(), l.cols() + r.cols());
  for (std::size_t i = 0; i < l.rows(); ++i) {
    for (std::size_t j = 0; j < l.cols(); ++j) n.value(i, j) = l(i, j);
    for (std::size_t j = 0; j < r.cols(); ++j) n.value(i, l.cols() + j) = r(i, j);
  }
  return t.push(std::move(n));
}

inline Var select_rows(Var a, std::vector<int> rows) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  auto n = detail::make_node(t, OpKind::select_rows, a);
  n.value = Matrix(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || static_cast<std::size_t>(rows[i]) >= x.rows()) {
      throw ShapeError("select_rows: row " + std::to_string(rows[i]) + " out of range for " +
                       shape_str(x.rows(), x.cols()));
    }
    auto src = x.row(static_cast<std::size_t>(rows[i]));
    std::copy(src.begin(), src.end(), n.value.row(i).begin());
  }
  n.index = std::move(rows);
  return t.push(std::move(n));
}

inline Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape;
  if (begin + count > a.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape_str(a.rows(), a.cols()));
  }
  auto n = detail::make_node(t, OpKind::slice_cols, a);
  n.offset = begin;
  n.value = col_block(a.value(), begin, count);
  return t.push(std::move(n));
}

/// Row-major reinterpretation to rows x cols.
inline Var reshape(Var a, std::size_t rows, std::size_t cols) {
  Tape& t = *a.tape;
  if (rows * cols != a.value().size()) {
    throw ShapeError("reshape: " + shape_str(a.rows(), a.cols()) + " to " + shape_str(rows, cols));
  }
  auto n = detail::make_node(t, OpKind::reshape, a);
  n.value = Matrix(rows, cols);
  std::copy(a.value().data().begin(), a.value().data().end(), n.value.data().begin());
  return t.push(std::move(n));
}

/// Identity on values, blocks gradient flow.
inline Var detach(Var a) {
  Tape& t = *a.tape;
  auto n = detail::make_node(t, OpKind::detach, a);
  n.needs_grad = false;
  n.value = a.value();
  return t.push(std::move(n));
}

/// Half squared Frobenius error: 0.5 * ||a - b||_F^2 (1x1).
inline Var mse_loss(Var a, Var b) {
  Tape& t = detail::same_tape(a, b, "mse_loss");
  if (!a.value().same_shape(b.value())) detail::shape_fail("mse_loss", a.value(), b.value());
  auto n = detail::make_node(t, OpKind::mse_loss, a, b);
  n.aux = a.value() - b.value();
  double s = 0.0;
  for (double v : n.aux.data()) s += v * v;
  n.value = Matrix(1, 1, 0.5 * s);
  return t.push(std::move(n));
}

/// Sum over rows of -log softmax(logits_i)[target_i] (1x1).
inline Var cross_entropy_rows(Var logits, std::vector<int> targets) {
  Tape& t = *logits.tape;
  const Matrix& z = logits.value();
  if (targets.size() != z.rows()) {
    throw ShapeError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " +
                     shape_str(z.rows(), z.cols()));
  }
  auto n = detail::make_node(t, OpKind::cross_entropy_rows, logits);
  n.aux = Matrix(z.rows(), z.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const int target = targets[i];
    if (target < 0 || static_cast<std::size_t>(target) >= z.cols()) {
      throw ShapeError("cross_entropy_rows: target " + std::to_string(target) + " out of range");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : z.row(i)) mx = std::max(mx, v);
    double sum = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) {
      n.aux(i, j) = std::exp(z(i, j) - mx);
      sum += n.aux(i, j);
    }
    for (std::size_t j = 0; j < z.cols(); ++j) n.aux(i, j) /= sum;
    total += -(z(i, static_cast<std::size_t>(target)) - mx - std::log(sum));
  }
  n.value = Matrix(1, 1, total);
  n.index = std::move(targets);
  return t.push(std::move(n));
}

inline Var embed_lookup(Var table, std::vector<int> ids) {
  Tape& t = *table.tape;
  const Matrix& e = table.value();
  auto n = detail::make_node(t, OpKind::embed_lookup, table);
  n.value = Matrix(ids.size(), e.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= e.rows()) {
      throw ShapeError("embed_lookup: id " + std::to_string(ids[i]) + " outside vocab " +
                       std::to_string(e.rows()));
    }
    auto src = e.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), n.value.row(i).begin());
  }
  n.index = std::move(ids);
  return t.push(std::move(n));
}

// ---------------------------------------------------------------------------
// Backward

inline Matrix& Tape::grad_slot(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty() && n.val().size() > 0) n.grad = Matrix(n.val().rows(), n.val().cols());
  return n.grad;
}

inline void Tape::accumulate(int id, const Matrix& g) {
  Matrix& slot = grad_slot(id);
  auto sd = slot.data();
  auto gd = g.data();
  for (std::size_t i = 0; i < sd.size(); ++i) sd[i] += gd[i];
}

inline void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("backward: loss from another tape");
  if (backward_done_) throw std::logic_error("backward: already run on this tape");
  if (value(loss).rows() != 1 || value(loss).cols() != 1) {
    throw ShapeError("backward: loss must be 1x1, got " +
                     shape_str(value(loss).rows(), value(loss).cols()));
  }
  backward_done_ = true;
  if (!grad_enabled_) return;
  grad_slot(loss.id)(0, 0) = 1.0;

  auto wants = [this](int id) { return id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad; };

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || n.grad.empty()) continue;
    const Matrix& g = n.grad;
    switch (n.op) {
      case OpKind::leaf:
        if (n.param != nullptr) {
          n.param->grad = n.param->grad.same_shape(g) ? n.param->grad + g : g;
        }
        break;
      case OpKind::constant:
      case OpKind::detach:
        break;
      case OpKind::matmul: {
        const Matrix& a = nodes_[static_cast<std::size_t>(n.a)].val();
        const Matrix& b = nodes_[static_cast<std::size_t>(n.b)].val();
        if (wants(n.a)) {
          Matrix& ga = grad_slot(n.a);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t k = 0; k < b.rows(); ++k) {
              double acc = 0.0;
              for (std::size_t j = 0; j < g.cols(); ++j) acc += g(i, j) * b(k, j);
              ga(i, k) += acc;
            }
        }
        if (wants(n.b)) {
          Matrix& gb = grad_slot(n.b);
          for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t k = 0; k < a.cols(); ++k) {
              const double aik = a(i, k);
              if (aik == 0.0) continue;
              for (std::size_t j = 0; j < g.cols(); ++j) gb(k, j) += aik * g(i, j);
            }
        }
        break;
      }
      case OpKind::transpose:
        if (wants(n.a)) accumulate(n.a, prefixlab::transpose(g));
        break;
      case OpKind::add:
        if (wants(n.a)) accumulate(n.a, g);
        if (wants(n.b)) accumulate(n.b, g);
        break;
      case OpKind::scale:
        if (wants(n.a)) accumulate(n.a, n.scalar * g);
        break;
      case OpKind::tanh:
        if (wants(n.a)) {
          Matrix ga = g;
          auto y = n.value.data();
          auto d = ga.data();
          for (std::size_t i = 0; i < d.size(); ++i) d[i] *= 1.0 - y[i] * y[i];
          accumulate(n.a, ga);
        }
        break;
      case OpKind::row_softmax:
        if (wants(n.a)) {
          Matrix& ga = grad_slot(n.a);
          const Matrix& y = n.value;
          for (std::size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
            for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - dot);
          }
        }
        break;
      case OpKind::concat_rows: {
        const std::size_t top = nodes_[static_cast<std::size_t>(n.a)].val().rows();
        if (wants(n.a) && top > 0) accumulate(n.a, row_block(g, 0, top));
        if (wants(n.b) && g.rows() > top) accumulate(n.b, row_block(g, top, g.rows() - top));
        break;
      }
      case OpKind::concat_cols: {
        const std::size_t left = nodes_[static_cast<std::size_t>(n.a)].val().cols();
        if (wants(n.a)) accumulate(n.a, col_block(g, 0, left));
        if (wants(n.b)) accumulate(n.b, col_block(g, left, g.cols() - left));
        break;
      }
      case OpKind::select_rows:
      case OpKind::embed_lookup:
        if (wants(n.a)) {
          Matrix& ga = grad_slot(n.a);
          for (std::size_t i = 0; i < n.index.size(); ++i) {
            auto dst = ga.row(static_cast<std::size_t>(n.index[i]));
            auto src = g.row(i);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
          }
        }
        break;
      case OpKind::slice_cols:
        if (wants(n.a)) {
          Matrix& ga = grad_slot(n.a);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < g.cols(); ++j) ga(i, n.offset + j) += g(i, j);
        }
        break;
      case OpKind::reshape:
        if (wants(n.a)) {
          Matrix& ga = grad_slot(n.a);
          auto dst = ga.data();
          auto src = g.data();
          for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
        }
        break;
      case OpKind::mse_loss: {
        const double s = g(0, 0);
        if (wants(n.a)) accumulate(n.a, s * n.aux);
        if (wants(n.b)) accumulate(n.b, -s * n.aux);
        break;
      }
      case OpKind::cross_entropy_rows:
        if (wants(n.a)) {
          Matrix ga = g(0, 0) * n.aux;
          for (std::size_t i = 0; i < n.index.size(); ++i) {
            ga(i, static_cast<std::size_t>(n.index[i])) -= g(0, 0);
          }
          accumulate(n.a, ga);
        }
        break;
    }
  }
}

// ---------------------------------------------------------------------------
// Finite-difference check

struct GradCheckOptions {
  double eps = 1e-6;
  std::size_t max_coords_per_param = 64;  // sampled coordinates per param
  std::uint64_t seed = 0;
};

/// Compares reverse-mode gradients of the scalar built by `f` against central
/// differences. Returns max |analytic - numeric| / max(1, |numeric|) over the
/// sampled coordinates of every trainable param.
inline double grad_check(const std::function<Var(Tape&)>& f, std::span<Param* const> params,
                         const GradCheckOptions& opts = {}) {
  if (opts.eps < 1e-7 || opts.eps > 1e-4) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-4]");
  }
  zero_grads(params);
  {
    Tape tape;
    Var loss = f(tape);
    tape.backward(loss);
  }
  auto eval = [&f]() {
    Tape tape(false);
    return f(tape).value()(0, 0);
  };

  Rng rng(opts.seed);
  double worst = 0.0;
  for (Param* p : params) {
    if (!p->trainable) continue;
    const auto coords = rng.sample_indices(p->value.size(), opts.max_coords_per_param);
    for (std::size_t c : coords) {
      double& x = p->value.data()[c];
      const double saved = x;
      x = saved + opts.eps;
      const double fp = eval();
      x = saved - opts.eps;
      const double fm = eval();
      x = saved;
      const double numeric = (fp - fm) / (2.0 * opts.eps);
      const double analytic = p->grad.data()[c];
      worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Optimizers

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction; moment buffers are owned here. Frozen params are skipped.
class Adam {
 public:
  explicit Adam(std::vector<Param*> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
    for (const Param* p : params_) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
    }
  }

  void step(double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Param& p = *params_[k];
      if (!p.trainable) continue;
      auto x = p.value.data();
      auto g = p.grad.data();
      auto m = m_[k].data();
      auto v = v_[k].data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.eps);
      }
    }
  }

  std::size_t steps() const { return t_; }
  const std::vector<Param*>& params() const { return params_; }

 private:
  std::vector<Param*> params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::size_t t_ = 0;
};

class Sgd {
 public:
  explicit Sgd(std::vector<Param*> params) : params_(std::move(params)) {}
  void step(double lr) {
    for (Param* p : params_) {
      if (!p->trainable) continue;
      auto x = p->value.data();
      auto g = p->grad.data();
      for (std::size_t i = 0; i < x.size(); ++i) x[i] -= lr * g[i];
    }
  }

 private:
  std::vector<Param*> params_;
};

/// Linear warmup over the first `warmup_ratio` of `total` steps, then cosine decay to 0.
inline double cosine_lr(std::size_t step, std::size_t total, double base, double warmup_ratio = 0.05) {
  if (total == 0) return base;
  const auto warmup = static_cast<std::size_t>(std::ceil(warmup_ratio * static_cast<double>(total)));
  if (step < warmup) return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double progress =
      static_cast<double>(step - warmup) / static_cast<double>(std::max<std::size_t>(1, total - warmup));
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

}  // namespace prefixlab
