#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xfit/autodiff/tape.hpp"

namespace xfit::ad {

namespace detail {

inline std::string shape_str(Index r, Index c) { return "(" + std::to_string(r) + "x" + std::to_string(c) + ")"; }

template <typename T>
std::string shape_str(const Var<T>& v) {
    return shape_str(v.rows(), v.cols());
}

template <typename T>
[[noreturn]] void mismatch(const char* op, const Var<T>& a, const Var<T>& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
Tape<T>& tape_of(const Var<T>& a, const Var<T>& b, const char* op) {
    if (a.tape() == nullptr || a.tape() != b.tape()) {
        throw ShapeError(std::string(op) + ": operands live on different tapes");
    }
    return *a.tape();
}

// b may be broadcast to a's shape when it is a row vector, a column vector or a scalar.
inline bool broadcastable(Index rb, Index cb, Index ra, Index ca) {
    if (rb == ra && cb == ca) return true;
    if (rb == 1 && cb == 1) return true;
    if (rb == 1 && cb == ca) return true;
    if (cb == 1 && rb == ra) return true;
    return false;
}

template <typename T>
Matrix<T> expand(const Matrix<T>& m, Index rows, Index cols) {
    if (m.rows() == rows && m.cols() == cols) return m;
    if (m.rows() == 1 && m.cols() == 1) return Matrix<T>::Constant(rows, cols, m(0, 0));
    if (m.rows() == 1) return m.replicate(rows, 1);
    return m.replicate(1, cols);
}

template <typename T>
std::pair<Index, Index> binary_shape(const char* op, const Var<T>& a, const Var<T>& b) {
    if (broadcastable(b.rows(), b.cols(), a.rows(), a.cols())) return {a.rows(), a.cols()};
    if (broadcastable(a.rows(), a.cols(), b.rows(), b.cols())) return {b.rows(), b.cols()};
    mismatch(op, a, b);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with row/column/scalar broadcasting.

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    auto& tape = detail::tape_of(a, b, "add");
    auto [r, c] = detail::binary_shape("add", a, b);
    Matrix<T> v = detail::expand(a.value(), r, c);
    if (b.rows() == r && b.cols() == c) {
        v += b.value();
    } else if (b.rows() == 1 && b.cols() == 1) {
        v.array() += b.value()(0, 0);
    } else if (b.rows() == 1) {
        v.rowwise() += b.value().row(0);
    } else {
        v.colwise() += b.value().col(0);
    }
    return tape.record(Op::add, {a.id(), b.id()}, std::move(v));
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    auto& tape = detail::tape_of(a, b, "sub");
    auto [r, c] = detail::binary_shape("sub", a, b);
    Matrix<T> v = detail::expand(a.value(), r, c) - detail::expand(b.value(), r, c);
    return tape.record(Op::sub, {a.id(), b.id()}, std::move(v));
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    auto& tape = detail::tape_of(a, b, "multiply");
    auto [r, c] = detail::binary_shape("multiply", a, b);
    Matrix<T> v = detail::expand(a.value(), r, c).cwiseProduct(detail::expand(b.value(), r, c));
    return tape.record(Op::mul, {a.id(), b.id()}, std::move(v));
}

template <typename T>
Var<T> scale(const Var<T>& a, T c) {
    Attrs<T> at;
    at.scalar = c;
    return a.tape()->record(Op::scale, {a.id()}, a.value() * c, std::move(at));
}

// ---------------------------------------------------------------------------
// Linear algebra and layout.

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    auto& tape = detail::tape_of(a, b, "matmul");
    if (a.cols() != b.rows()) detail::mismatch("matmul", a, b);
    Matrix<T> v = a.value() * b.value();
    return tape.record(Op::matmul, {a.id(), b.id()}, std::move(v));
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
    Matrix<T> v = a.value().transpose();
    return a.tape()->record(Op::transpose, {a.id()}, std::move(v));
}

template <typename T>
Var<T> reshape(const Var<T>& a, Index rows, Index cols) {
    if (rows * cols != a.rows() * a.cols()) {
        throw ShapeError("reshape: cannot view " + detail::shape_str(a) + " as " + detail::shape_str(rows, cols));
    }
    Matrix<T> v = Eigen::Map<const Matrix<T>>(a.value().data(), rows, cols);
    return a.tape()->record(Op::reshape, {a.id()}, std::move(v));
}

template <typename T>
Var<T> concat_rows(std::span<const Var<T>> parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no operands");
    Index rows = 0;
    const Index cols = parts[0].cols();
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        detail::tape_of(parts[0], p, "concat_rows");
        if (p.cols() != cols) detail::mismatch("concat_rows", parts[0], p);
        rows += p.rows();
        ids.push_back(p.id());
    }
    Matrix<T> v(rows, cols);
    Index off = 0;
    for (const auto& p : parts) {
        v.middleRows(off, p.rows()) = p.value();
        off += p.rows();
    }
    return parts[0].tape()->record(Op::concat_rows, std::move(ids), std::move(v));
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no operands");
    Index cols = 0;
    const Index rows = parts[0].rows();
    std::vector<std::size_t> ids;
    for (const auto& p : parts) {
        detail::tape_of(parts[0], p, "concat_cols");
        if (p.rows() != rows) detail::mismatch("concat_cols", parts[0], p);
        cols += p.cols();
        ids.push_back(p.id());
    }
    Matrix<T> v(rows, cols);
    Index off = 0;
    for (const auto& p : parts) {
        v.middleCols(off, p.cols()) = p.value();
        off += p.cols();
    }
    return parts[0].tape()->record(Op::concat_cols, std::move(ids), std::move(v));
}

template <typename T>
Var<T> concat_rows(std::initializer_list<Var<T>> parts) {
    std::vector<Var<T>> v(parts);
    return concat_rows(std::span<const Var<T>>(v));
}

template <typename T>
Var<T> concat_cols(std::initializer_list<Var<T>> parts) {
    std::vector<Var<T>> v(parts);
    return concat_cols(std::span<const Var<T>>(v));
}

template <typename T>
Var<T> slice_rows(const Var<T>& a, Index offset, Index count) {
    if (offset < 0 || count < 0 || offset + count > a.rows()) {
        throw ShapeError("slice_rows: rows [" + std::to_string(offset) + ", " + std::to_string(offset + count) +
                         ") out of range for " + detail::shape_str(a));
    }
    Attrs<T> at;
    at.a = offset;
    Matrix<T> v = a.value().middleRows(offset, count);
    return a.tape()->record(Op::slice_rows, {a.id()}, std::move(v), std::move(at));
}

template <typename T>
Var<T> slice_cols(const Var<T>& a, Index offset, Index count) {
    if (offset < 0 || count < 0 || offset + count > a.cols()) {
        throw ShapeError("slice_cols: cols [" + std::to_string(offset) + ", " + std::to_string(offset + count) +
                         ") out of range for " + detail::shape_str(a));
    }
    Attrs<T> at;
    at.a = offset;
    Matrix<T> v = a.value().middleCols(offset, count);
    return a.tape()->record(Op::slice_cols, {a.id()}, std::move(v), std::move(at));
}

// Places a at row `offset` of a zero matrix with `total` rows.
template <typename T>
Var<T> pad_rows(const Var<T>& a, Index offset, Index total) {
    if (offset < 0 || offset + a.rows() > total) {
        throw ShapeError("pad_rows: " + detail::shape_str(a) + " does not fit at row " + std::to_string(offset) +
                         " of " + std::to_string(total));
    }
    Attrs<T> at;
    at.a = offset;
    at.b = total;
    Matrix<T> v = Matrix<T>::Zero(total, a.cols());
    v.middleRows(offset, a.rows()) = a.value();
    return a.tape()->record(Op::pad_rows, {a.id()}, std::move(v), std::move(at));
}

template <typename T>
Var<T> pad_cols(const Var<T>& a, Index offset, Index total) {
    if (offset < 0 || offset + a.cols() > total) {
        throw ShapeError("pad_cols: " + detail::shape_str(a) + " does not fit at col " + std::to_string(offset) +
                         " of " + std::to_string(total));
    }
    Attrs<T> at;
    at.a = offset;
    at.b = total;
    Matrix<T> v = Matrix<T>::Zero(a.rows(), total);
    v.middleCols(offset, a.cols()) = a.value();
    return a.tape()->record(Op::pad_cols, {a.id()}, std::move(v), std::move(at));
}

// Embedding lookup: row i of the result is row indices[i] of a.
template <typename T>
Var<T> gather_rows(const Var<T>& a, std::shared_ptr<const IndexList> indices) {
    Matrix<T> v(static_cast<Index>(indices->size()), a.cols());
    for (std::size_t i = 0; i < indices->size(); ++i) {
        const Index r = (*indices)[i];
        if (r < 0 || r >= a.rows()) {
            throw ShapeError("gather_rows: index " + std::to_string(r) + " out of range for " + detail::shape_str(a));
        }
        v.row(static_cast<Index>(i)) = a.value().row(r);
    }
    Attrs<T> at;
    at.indices = std::move(indices);
    return a.tape()->record(Op::gather_rows, {a.id()}, std::move(v), std::move(at));
}

template <typename T>
Var<T> gather_rows(const Var<T>& a, IndexList indices) {
    return gather_rows(a, std::make_shared<const IndexList>(std::move(indices)));
}

// Adjoint of gather_rows: row i of a is accumulated into row indices[i] of a total-row zero matrix.
template <typename T>
Var<T> scatter_rows(const Var<T>& a, std::shared_ptr<const IndexList> indices, Index total) {
    if (static_cast<Index>(indices->size()) != a.rows()) {
        throw ShapeError("scatter_rows: " + std::to_string(indices->size()) + " indices for " + detail::shape_str(a));
    }
    Matrix<T> v = Matrix<T>::Zero(total, a.cols());
    for (std::size_t i = 0; i < indices->size(); ++i) {
        const Index r = (*indices)[i];
        if (r < 0 || r >= total) {
            throw ShapeError("scatter_rows: index " + std::to_string(r) + " out of range for " +
                             std::to_string(total) + " rows");
        }
        v.row(r) += a.value().row(static_cast<Index>(i));
    }
    Attrs<T> at;
    at.indices = std::move(indices);
    at.b = total;
    return a.tape()->record(Op::scatter_rows, {a.id()}, std::move(v), std::move(at));
}

// 1xN -> MxN
template <typename T>
Var<T> tile_rows(const Var<T>& a, Index rows) {
    if (a.rows() != 1) throw ShapeError("tile_rows: expected a row vector, got " + detail::shape_str(a));
    Matrix<T> v = a.value().replicate(rows, 1);
    return a.tape()->record(Op::tile_rows, {a.id()}, std::move(v));
}

// Mx1 -> MxN
template <typename T>
Var<T> tile_cols(const Var<T>& a, Index cols) {
    if (a.cols() != 1) throw ShapeError("tile_cols: expected a column vector, got " + detail::shape_str(a));
    Matrix<T> v = a.value().replicate(1, cols);
    return a.tape()->record(Op::tile_cols, {a.id()}, std::move(v));
}

// ---------------------------------------------------------------------------
// Reductions.

template <typename T>
Var<T> sum(const Var<T>& a) {
    Matrix<T> v(1, 1);
    v(0, 0) = a.value().sum();
    return a.tape()->record(Op::sum, {a.id()}, std::move(v));
}

// MxN -> Mx1
template <typename T>
Var<T> row_sums(const Var<T>& a) {
    Matrix<T> v = a.value().rowwise().sum();
    return a.tape()->record(Op::row_sums, {a.id()}, std::move(v));
}

// MxN -> 1xN
template <typename T>
Var<T> col_sums(const Var<T>& a) {
    Matrix<T> v = a.value().colwise().sum();
    return a.tape()->record(Op::col_sums, {a.id()}, std::move(v));
}

// ---------------------------------------------------------------------------
// Nonlinearities.

// Row-wise softmax.
template <typename T>
Var<T> softmax(const Var<T>& a) {
    Matrix<T> v = a.value();
    for (Index i = 0; i < v.rows(); ++i) {
        auto row = v.row(i);
        row.array() -= row.maxCoeff();
        row = row.array().exp().matrix();
        row /= row.sum();
    }
    return a.tape()->record(Op::softmax, {a.id()}, std::move(v));
}

template <typename T>
Var<T> log(const Var<T>& a) {
    if ((a.value().array() <= T(0)).any()) {
        throw NumericError("log: non-positive argument (numeric overflow)");
    }
    Matrix<T> v = a.value().array().log().matrix();
    return a.tape()->record(Op::log, {a.id()}, std::move(v));
}

template <typename T>
Var<T> exp(const Var<T>& a) {
    Matrix<T> v = a.value().array().exp().matrix();
    return a.tape()->record(Op::exp, {a.id()}, std::move(v));
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
    Matrix<T> v = a.value().array().tanh().matrix();
    return a.tape()->record(Op::tanh, {a.id()}, std::move(v));
}

template <typename T>
Var<T> relu(const Var<T>& a) {
    Matrix<T> v = a.value().cwiseMax(T(0));
    return a.tape()->record(Op::relu, {a.id()}, std::move(v));
}

// Elementwise power with a constant exponent.
template <typename T>
Var<T> pow(const Var<T>& a, T p) {
    Matrix<T> v = a.value().array().pow(p).matrix();
    Attrs<T> at;
    at.scalar = p;
    return a.tape()->record(Op::pow, {a.id()}, std::move(v), std::move(at));
}

// Row-wise normalization to zero mean and unit variance (no affine part).
template <typename T>
Var<T> layer_norm(const Var<T>& a, T eps) {
    Matrix<T> v = a.value();
    const T n = static_cast<T>(v.cols());
    for (Index i = 0; i < v.rows(); ++i) {
        auto row = v.row(i);
        const T mu = row.sum() / n;
        row.array() -= mu;
        const T var = row.squaredNorm() / n;
        row *= T(1) / std::sqrt(var + eps);
    }
    Attrs<T> at;
    at.scalar = eps;
    return a.tape()->record(Op::layer_norm, {a.id()}, std::move(v), std::move(at));
}

// Weighted mean over rows of -log softmax(logits)[target]. Rows with weight 0 are ignored.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const Index> targets, std::span<const T> weights) {
    const Index m = logits.rows();
    const Index vocab = logits.cols();
    if (static_cast<Index>(targets.size()) != m || static_cast<Index>(weights.size()) != m) {
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets and " +
                         std::to_string(weights.size()) + " weights for logits " + detail::shape_str(logits));
    }
    T total = 0;
    for (T w : weights) total += w;
    if (!(total > T(0))) throw ShapeError("cross_entropy: empty effective target (all rows masked)");

    auto onehot = std::make_shared<Matrix<T>>(Matrix<T>::Zero(m, vocab));
    auto wcol = std::make_shared<Matrix<T>>(m, 1);
    T loss = 0;
    const auto& z = logits.value();
    for (Index i = 0; i < m; ++i) {
        const Index t = targets[static_cast<std::size_t>(i)];
        if (t < 0 || t >= vocab) {
            throw ShapeError("cross_entropy: target " + std::to_string(t) + " outside vocabulary of size " +
                             std::to_string(vocab));
        }
        const T w = weights[static_cast<std::size_t>(i)] / total;
        (*wcol)(i, 0) = w;
        (*onehot)(i, t) = w;
        if (w == T(0)) continue;
        const T mx = z.row(i).maxCoeff();
        const T lse = mx + std::log((z.row(i).array() - mx).exp().sum());
        loss += w * (lse - z(i, t));
    }
    Matrix<T> v(1, 1);
    v(0, 0) = loss;
    Attrs<T> at;
    at.aux = std::move(onehot);
    at.aux2 = std::move(wcol);
    return logits.tape()->record(Op::cross_entropy, {logits.id()}, std::move(v), std::move(at));
}

// ---------------------------------------------------------------------------
// Composites built from the primitives above.

template <typename T>
Var<T> neg(const Var<T>& a) {
    return scale(a, T(-1));
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.rows() * a.cols()));
}

template <typename T>
Var<T> row_means(const Var<T>& a) {
    return scale(row_sums(a), T(1) / static_cast<T>(a.cols()));
}

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) {
    return add(a, b);
}

template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) {
    return sub(a, b);
}

template <typename T>
Var<T> operator-(const Var<T>& a) {
    return neg(a);
}

}  // namespace xfit::ad
