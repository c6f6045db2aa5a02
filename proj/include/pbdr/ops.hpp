#pragma once

// Differentiable free functions over Var. Shapes are explicit: the only
// broadcast is a [1, n] bias row added to every row of a [m, n] matrix.

#include "pbdr/tape.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace pbdr {

namespace detail {

inline std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
}

template <class S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(op) + ": shape mismatch " + shape_str(a.rows(), a.cols()) + " vs " +
              shape_str(b.rows(), b.cols()));
}

template <class S>
S stable_softplus(S x) {
  return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x)));
}

template <class S>
S stable_sigmoid(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  const S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace detail

template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ " +
                                    detail::shape_str(a.rows(), a.cols()) + " * " +
                                    detail::shape_str(b.rows(), b.cols()));
  const auto ia = a.id(), ib = b.id();
  Matrix<S> out = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "add");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() + b.value(), {a, b}, [ia, ib](Tape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad_ref(self));
    t.accumulate(ib, t.grad_ref(self));
  });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "sub");
  const auto ia = a.id(), ib = b.id();
  return a.tape().record(a.value() - b.value(), {a, b}, [ia, ib](Tape<S>& t, std::size_t self) {
    t.accumulate(ia, t.grad_ref(self));
    t.accumulate(ib, -t.grad_ref(self));
  });
}

/// Elementwise (Hadamard) product.
template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "mul");
  const auto ia = a.id(), ib = b.id();
  Matrix<S> out = a.value().cwiseProduct(b.value());
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    if (t.requires_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.value(ia)));
  });
}

/// x[m, n] + bias[1, n] on every row.
template <class S>
Var<S> add_bias(const Var<S>& x, const Var<S>& bias) {
  require(bias.rows() == 1 && bias.cols() == x.cols(),
          "add_bias: bias " + detail::shape_str(bias.rows(), bias.cols()) + " does not fit " +
              detail::shape_str(x.rows(), x.cols()));
  const auto ix = x.id(), ib = bias.id();
  Matrix<S> out = x.value().rowwise() + bias.value().row(0);
  return x.tape().record(std::move(out), {x, bias}, [ix, ib](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    t.accumulate(ix, g);
    if (t.requires_grad(ib)) t.accumulate(ib, g.colwise().sum());
  });
}

template <class S>
Var<S> scale(const Var<S>& x, S factor) {
  const auto ix = x.id();
  return x.tape().record(x.value() * factor, {x}, [ix, factor](Tape<S>& t, std::size_t self) {
    t.accumulate(ix, t.grad_ref(self) * factor);
  });
}

template <class S>
Var<S> add_scalar(const Var<S>& x, S offset) {
  const auto ix = x.id();
  Matrix<S> out = x.value().array() + offset;
  return x.tape().record(std::move(out), {x}, [ix](Tape<S>& t, std::size_t self) {
    t.accumulate(ix, t.grad_ref(self));
  });
}

template <class S>
Var<S> operator+(const Var<S>& a, const Var<S>& b) { return add(a, b); }
template <class S>
Var<S> operator-(const Var<S>& a, const Var<S>& b) { return sub(a, b); }
template <class S>
Var<S> operator-(const Var<S>& a) { return scale(a, S(-1)); }
template <class S>
Var<S> operator*(S factor, const Var<S>& a) { return scale(a, factor); }

/// Column-wise concatenation of matrices with equal row counts.
template <class S>
Var<S> concat(const std::vector<Var<S>>& parts) {
  require(!parts.empty(), "concat: no inputs");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat: row counts differ");
    cols += p.cols();
  }
  Matrix<S> out(rows, cols);
  std::vector<std::size_t> ids;
  std::vector<Eigen::Index> widths;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  return parts.front().tape().record(
      std::move(out), parts, [ids, widths](Tape<S>& t, std::size_t self) {
        const auto& g = t.grad_ref(self);
        Eigen::Index off = 0;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          if (t.requires_grad(ids[i])) t.accumulate(ids[i], g.middleCols(off, widths[i]));
          off += widths[i];
        }
      });
}

/// Columns [begin, begin + count).
template <class S>
Var<S> slice(const Var<S>& x, Eigen::Index begin, Eigen::Index count) {
  require(begin >= 0 && count >= 0 && begin + count <= x.cols(), "slice: column range out of bounds");
  const auto ix = x.id();
  const Eigen::Index rows = x.rows(), cols = x.cols();
  Matrix<S> out = x.value().middleCols(begin, count);
  return x.tape().record(std::move(out), {x}, [ix, begin, count, rows, cols](Tape<S>& t, std::size_t self) {
    Matrix<S> g = Matrix<S>::Zero(rows, cols);
    g.middleCols(begin, count) = t.grad_ref(self);
    t.accumulate(ix, g);
  });
}

/// Row gather: out.row(i) = x.row(index[i]). Gradients scatter-add back.
template <class S>
Var<S> gather_rows(const Var<S>& x, std::span<const int> index) {
  const auto ix = x.id();
  const Eigen::Index rows = x.rows(), cols = x.cols();
  Matrix<S> out(static_cast<Eigen::Index>(index.size()), cols);
  for (std::size_t i = 0; i < index.size(); ++i) {
    require(index[i] >= 0 && index[i] < rows, "gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = x.value().row(index[i]);
  }
  std::vector<int> idx(index.begin(), index.end());
  return x.tape().record(std::move(out), {x}, [ix, idx, rows, cols](Tape<S>& t, std::size_t self) {
    const auto& g = t.grad_ref(self);
    Matrix<S> gx = Matrix<S>::Zero(rows, cols);
    for (std::size_t i = 0; i < idx.size(); ++i) gx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(ix, gx);
  });
}

template <class S>
Var<S> tanh(const Var<S>& x) {
  const auto ix = x.id();
  Matrix<S> out = x.value().array().tanh();
  return x.tape().record(std::move(out), {x}, [ix](Tape<S>& t, std::size_t self) {
    const auto& y = t.value(self);
    t.accumulate(ix, (t.grad_ref(self).array() * (S(1) - y.array().square())).matrix());
  });
}

template <class S>
Var<S> sigmoid(const Var<S>& x) {
  const auto ix = x.id();
  Matrix<S> out = x.value().unaryExpr([](S v) { return detail::stable_sigmoid(v); });
  return x.tape().record(std::move(out), {x}, [ix](Tape<S>& t, std::size_t self) {
    const auto& y = t.value(self);
    t.accumulate(ix, (t.grad_ref(self).array() * y.array() * (S(1) - y.array())).matrix());
  });
}

template <class S>
Var<S> softplus(const Var<S>& x) {
  const auto ix = x.id();
  Matrix<S> out = x.value().unaryExpr([](S v) { return detail::stable_softplus(v); });
  return x.tape().record(std::move(out), {x}, [ix](Tape<S>& t, std::size_t self) {
    Matrix<S> d = t.value(ix).unaryExpr([](S v) { return detail::stable_sigmoid(v); });
    t.accumulate(ix, t.grad_ref(self).cwiseProduct(d));
  });
}

template <class S>
Var<S> exp(const Var<S>& x) {
  const auto ix = x.id();
  Matrix<S> out = x.value().array().exp();
  return x.tape().record(std::move(out), {x}, [ix](Tape<S>& t, std::size_t self) {
    t.accumulate(ix, t.grad_ref(self).cwiseProduct(t.value(self)));
  });
}

template <class S>
Var<S> square(const Var<S>& x) {
  const auto ix = x.id();
  Matrix<S> out = x.value().array().square();
  return x.tape().record(std::move(out), {x}, [ix](Tape<S>& t, std::size_t self) {
    t.accumulate(ix, (S(2) * t.grad_ref(self).array() * t.value(ix).array()).matrix());
  });
}

/// Clamp into [lo, hi]; gradient passes only strictly inside the interval.
template <class S>
Var<S> clamp(const Var<S>& x, S lo, S hi) {
  const auto ix = x.id();
  Matrix<S> out = x.value().cwiseMax(lo).cwiseMin(hi);
  return x.tape().record(std::move(out), {x}, [ix, lo, hi](Tape<S>& t, std::size_t self) {
    const auto& v = t.value(ix);
    Matrix<S> mask = ((v.array() > lo) && (v.array() < hi)).template cast<S>();
    t.accumulate(ix, t.grad_ref(self).cwiseProduct(mask));
  });
}

/// max(x, floor) elementwise; no gradient where the floor is active.
template <class S>
Var<S> maximum(const Var<S>& x, S floor) {
  const auto ix = x.id();
  Matrix<S> out = x.value().cwiseMax(floor);
  return x.tape().record(std::move(out), {x}, [ix, floor](Tape<S>& t, std::size_t self) {
    Matrix<S> mask = (t.value(ix).array() > floor).template cast<S>();
    t.accumulate(ix, t.grad_ref(self).cwiseProduct(mask));
  });
}

/// Sum of all entries, [1, 1].
template <class S>
Var<S> sum(const Var<S>& x) {
  const auto ix = x.id();
  const Eigen::Index rows = x.rows(), cols = x.cols();
  Matrix<S> out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape().record(std::move(out), {x}, [ix, rows, cols](Tape<S>& t, std::size_t self) {
    t.accumulate(ix, Matrix<S>::Constant(rows, cols, t.grad_ref(self)(0, 0)));
  });
}

/// Mean of all entries, [1, 1].
template <class S>
Var<S> mean(const Var<S>& x) {
  require(x.value().size() > 0, "mean: empty input");
  return scale(sum(x), S(1) / static_cast<S>(x.value().size()));
}

/// Per-row sum, [m, n] -> [m, 1].
template <class S>
Var<S> row_sum(const Var<S>& x) {
  const auto ix = x.id();
  const Eigen::Index cols = x.cols();
  Matrix<S> out = x.value().rowwise().sum();
  return x.tape().record(std::move(out), {x}, [ix, cols](Tape<S>& t, std::size_t self) {
    t.accumulate(ix, t.grad_ref(self).replicate(1, cols));
  });
}

/// Mean squared difference over all entries, [1, 1].
template <class S>
Var<S> mse(const Var<S>& a, const Var<S>& b) {
  return mean(square(sub(a, b)));
}

/// Same value, cut from the graph.
template <class S>
Var<S> stop_gradient(const Var<S>& x) {
  return x.tape().detach(x.value());
}

}  // namespace pbdr
