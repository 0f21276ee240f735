#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "xfit/errors.hpp"

namespace xfit::ad {

// Dense row-major 2-D array. Scalars are 1x1, vectors are 1xN or Nx1.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

using Index = Eigen::Index;
using IndexList = std::vector<Index>;

enum class Op : std::uint8_t {
    leaf,
    add,
    sub,
    mul,
    scale,
    matmul,
    transpose,
    reshape,
    concat_rows,
    concat_cols,
    slice_rows,
    slice_cols,
    pad_rows,
    pad_cols,
    gather_rows,
    scatter_rows,
    tile_rows,
    tile_cols,
    sum,
    row_sums,
    col_sums,
    softmax,
    log,
    exp,
    tanh,
    relu,
    pow,
    layer_norm,
    cross_entropy,
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::mul: return "multiply";
        case Op::scale: return "scale";
        case Op::matmul: return "matmul";
        case Op::transpose: return "transpose";
        case Op::reshape: return "reshape";
        case Op::concat_rows: return "concat_rows";
        case Op::concat_cols: return "concat_cols";
        case Op::slice_rows: return "slice_rows";
        case Op::slice_cols: return "slice_cols";
        case Op::pad_rows: return "pad_rows";
        case Op::pad_cols: return "pad_cols";
        case Op::gather_rows: return "gather_rows";
        case Op::scatter_rows: return "scatter_rows";
        case Op::tile_rows: return "tile_rows";
        case Op::tile_cols: return "tile_cols";
        case Op::sum: return "sum";
        case Op::row_sums: return "row_sums";
        case Op::col_sums: return "col_sums";
        case Op::softmax: return "softmax";
        case Op::log: return "log";
        case Op::exp: return "exp";
        case Op::tanh: return "tanh";
        case Op::relu: return "relu";
        case Op::pow: return "pow";
        case Op::layer_norm: return "layer_norm";
        case Op::cross_entropy: return "cross_entropy";
    }
    return "unknown";
}

// Ops that only move, copy or bound finite values cannot create a non-finite one.
inline bool can_overflow(Op op) {
    switch (op) {
        case Op::transpose:
        case Op::reshape:
        case Op::concat_rows:
        case Op::concat_cols:
        case Op::slice_rows:
        case Op::slice_cols:
        case Op::pad_rows:
        case Op::pad_cols:
        case Op::gather_rows:
        case Op::tile_rows:
        case Op::tile_cols:
        case Op::relu:
        case Op::softmax:
            return false;
        default:
            return true;
    }
}

// Per-op attributes. Which fields are meaningful depends on the op.
template <typename T>
struct Attrs {
    T scalar{};
    Index a = 0;
    Index b = 0;
    std::shared_ptr<const IndexList> indices;
    std::shared_ptr<const Matrix<T>> aux;
    std::shared_ptr<const Matrix<T>> aux2;
};

template <typename T>
struct Node {
    std::size_t id = 0;
    Op op = Op::leaf;
    std::vector<std::size_t> inputs;
    Matrix<T> value;
    bool requires_grad = false;
    Attrs<T> attrs;
};

template <typename T>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
public:
    Var() = default;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    [[nodiscard]] Tape<T>* tape() const { return tape_; }
    [[nodiscard]] std::size_t id() const { return id_; }
    [[nodiscard]] const Node<T>& node() const { return tape_->node(id_); }
    [[nodiscard]] const Matrix<T>& value() const { return node().value; }
    [[nodiscard]] Index rows() const { return value().rows(); }
    [[nodiscard]] Index cols() const { return value().cols(); }
    [[nodiscard]] bool requires_grad() const { return node().requires_grad; }
    [[nodiscard]] bool valid() const { return tape_ != nullptr; }

    [[nodiscard]] T item() const {
        if (rows() != 1 || cols() != 1) {
            throw ShapeError("item: expected a 1x1 value, got " + std::to_string(rows()) + "x" +
                             std::to_string(cols()));
        }
        return value()(0, 0);
    }

private:
    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

// Define-by-run record of every value computed. Nodes are appended in
// evaluation order, so ids are a topological order of the graph.
template <typename T>
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;
    Tape(Tape&&) = delete;
    Tape& operator=(Tape&&) = delete;

    Var<T> variable(Matrix<T> value, bool requires_grad = true) {
        return push(Op::leaf, {}, std::move(value), {}, requires_grad && recording());
    }

    Var<T> constant(Matrix<T> value) { return push(Op::leaf, {}, std::move(value), {}, false); }

    Var<T> scalar(T v) {
        Matrix<T> m(1, 1);
        m(0, 0) = v;
        return constant(std::move(m));
    }

    Var<T> record(Op op, std::vector<std::size_t> inputs, Matrix<T> value, Attrs<T> attrs = {}) {
        bool rg = false;
        if (recording()) {
            for (auto in : inputs) {
                if (nodes_[in].requires_grad) {
                    rg = true;
                    break;
                }
            }
        }
        return push(op, std::move(inputs), std::move(value), std::move(attrs), rg);
    }

    [[nodiscard]] const Node<T>& node(std::size_t id) const { return nodes_[id]; }
    [[nodiscard]] std::size_t size() const { return nodes_.size(); }
    [[nodiscard]] bool recording() const { return no_grad_depth_ == 0; }
    [[nodiscard]] bool owns(const Var<T>& v) const { return v.tape() == this && v.id() < nodes_.size(); }

    void push_no_grad() { ++no_grad_depth_; }
    void pop_no_grad() { --no_grad_depth_; }

private:
    Var<T> push(Op op, std::vector<std::size_t> inputs, Matrix<T> value, Attrs<T> attrs, bool requires_grad) {
        if (can_overflow(op) && !value.allFinite()) {
            throw NumericError(std::string(op_name(op)) + ": non-finite result (numeric overflow)");
        }
        Node<T>& n = nodes_.emplace_back();
        n.id = nodes_.size() - 1;
        n.op = op;
        n.inputs = std::move(inputs);
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.attrs = std::move(attrs);
        return Var<T>(this, n.id);
    }

    // deque: references to existing nodes survive appends made during backward
    std::deque<Node<T>> nodes_;
    int no_grad_depth_ = 0;
};

// Disables gradient recording on a tape for the guard's lifetime.
template <typename T>
class NoGradGuard {
public:
    explicit NoGradGuard(Tape<T>& tape) : tape_(tape) { tape_.push_no_grad(); }
    ~NoGradGuard() { tape_.pop_no_grad(); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape<T>& tape_;
};

}  // namespace xfit::ad
