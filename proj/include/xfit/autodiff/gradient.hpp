#pragma once

#include <optional>
#include <span>
#include <vector>

#include "xfit/autodiff/ops.hpp"

namespace xfit::ad {

namespace detail {

// Sum g down to a (rows x cols) operand that was broadcast in the forward op.
template <typename T>
Var<T> unbroadcast(const Var<T>& g, Index rows, Index cols) {
    if (g.rows() == rows && g.cols() == cols) return g;
    if (rows == 1 && cols == 1) return sum(g);
    if (rows == 1) return col_sums(g);
    return row_sums(g);
}

// Adjoint rules. Every rule is written with the forward primitives, so when
// the tape is recording the adjoints are themselves differentiable.
template <typename T>
void backward_rule(Tape<T>& tape, std::size_t id, const Var<T>& g, const std::vector<char>& need,
                   std::vector<Var<T>>& out) {
    const Node<T>& n = tape.node(id);
    auto in = [&](std::size_t i) { return Var<T>(&tape, n.inputs[i]); };
    const Var<T> y(&tape, id);
    out.assign(n.inputs.size(), Var<T>{});

    switch (n.op) {
        case Op::leaf: break;
        case Op::add:
            if (need[0]) out[0] = unbroadcast(g, in(0).rows(), in(0).cols());
            if (need[1]) out[1] = unbroadcast(g, in(1).rows(), in(1).cols());
            break;
        case Op::sub:
            if (need[0]) out[0] = unbroadcast(g, in(0).rows(), in(0).cols());
            if (need[1]) out[1] = unbroadcast(neg(g), in(1).rows(), in(1).cols());
            break;
        case Op::mul:
            if (need[0]) out[0] = unbroadcast(mul(g, in(1)), in(0).rows(), in(0).cols());
            if (need[1]) out[1] = unbroadcast(mul(g, in(0)), in(1).rows(), in(1).cols());
            break;
        case Op::scale: out[0] = scale(g, n.attrs.scalar); break;
        case Op::matmul:
            if (need[0]) out[0] = matmul(g, transpose(in(1)));
            if (need[1]) out[1] = matmul(transpose(in(0)), g);
            break;
        case Op::transpose: out[0] = transpose(g); break;
        case Op::reshape: out[0] = reshape(g, in(0).rows(), in(0).cols()); break;
        case Op::concat_rows: {
            Index off = 0;
            for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                const Index r = in(i).rows();
                if (need[i]) out[i] = slice_rows(g, off, r);
                off += r;
            }
            break;
        }
        case Op::concat_cols: {
            Index off = 0;
            for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                const Index c = in(i).cols();
                if (need[i]) out[i] = slice_cols(g, off, c);
                off += c;
            }
            break;
        }
        case Op::slice_rows: out[0] = pad_rows(g, n.attrs.a, in(0).rows()); break;
        case Op::slice_cols: out[0] = pad_cols(g, n.attrs.a, in(0).cols()); break;
        case Op::pad_rows: out[0] = slice_rows(g, n.attrs.a, in(0).rows()); break;
        case Op::pad_cols: out[0] = slice_cols(g, n.attrs.a, in(0).cols()); break;
        case Op::gather_rows: out[0] = scatter_rows(g, n.attrs.indices, in(0).rows()); break;
        case Op::scatter_rows: out[0] = gather_rows(g, n.attrs.indices); break;
        case Op::tile_rows: out[0] = col_sums(g); break;
        case Op::tile_cols: out[0] = row_sums(g); break;
        case Op::sum: out[0] = tile_rows(tile_cols(g, in(0).cols()), in(0).rows()); break;
        case Op::row_sums: out[0] = tile_cols(g, in(0).cols()); break;
        case Op::col_sums: out[0] = tile_rows(g, in(0).rows()); break;
        case Op::softmax: out[0] = mul(y, sub(g, row_sums(mul(g, y)))); break;
        case Op::log: out[0] = mul(g, pow(in(0), T(-1))); break;
        case Op::exp: out[0] = mul(g, y); break;
        case Op::tanh: out[0] = mul(g, add(neg(mul(y, y)), tape.scalar(T(1)))); break;
        case Op::relu: {
            Matrix<T> mask = (in(0).value().array() > T(0)).template cast<T>().matrix();
            out[0] = mul(g, tape.constant(std::move(mask)));
            break;
        }
        case Op::pow: {
            const T p = n.attrs.scalar;
            out[0] = mul(g, scale(pow(in(0), p - T(1)), p));
            break;
        }
        case Op::layer_norm: {
            // gx = s * (g - mean(g) - y * mean(g*y)), s = (var(x) + eps)^-1/2
            const Var<T> x = in(0);
            const Var<T> xc = sub(x, row_means(x));
            const Var<T> s = pow(add(row_means(mul(xc, xc)), tape.scalar(n.attrs.scalar)), T(-0.5));
            const Var<T> centered = sub(sub(g, row_means(g)), mul(y, row_means(mul(g, y))));
            out[0] = mul(centered, s);
            break;
        }
        case Op::cross_entropy: {
            // (softmax(z) * w - onehot * w) * g
            const Var<T> p = mul(softmax(in(0)), tape.constant(*n.attrs.aux2));
            out[0] = mul(sub(p, tape.constant(*n.attrs.aux)), g);
            break;
        }
    }
}

}  // namespace detail

// Reverse-mode adjoints d(output)/d(wrt[i]). With create_graph the adjoint
// computation is recorded, so the results can be differentiated again.
template <typename T>
std::vector<Var<T>> gradient(const Var<T>& output, std::span<const Var<T>> wrt, bool create_graph = false) {
    if (output.tape() == nullptr) throw ShapeError("gradient: output is not on a tape");
    Tape<T>& tape = *output.tape();
    if (output.rows() != 1 || output.cols() != 1) {
        throw ShapeError("gradient: output must be scalar, got " + detail::shape_str(output));
    }
    std::size_t begin = output.id();
    for (const auto& w : wrt) {
        if (!tape.owns(w)) throw ShapeError("gradient: wrt node is not on the output's tape");
        if (!w.requires_grad()) {
            throw ShapeError("gradient: wrt node " + std::to_string(w.id()) + " does not require grad");
        }
        begin = std::min(begin, w.id());
    }
    const std::size_t end = output.id() + 1;

    // reach[i]: node i depends on some wrt node through requires-grad edges.
    std::vector<char> reach(end, 0);
    for (const auto& w : wrt) {
        if (w.id() < end) reach[w.id()] = 1;
    }
    for (std::size_t id = begin; id < end; ++id) {
        const auto& n = tape.node(id);
        if (reach[id] || !n.requires_grad) continue;
        for (auto i : n.inputs) {
            if (i >= begin && reach[i]) {
                reach[id] = 1;
                break;
            }
        }
    }

    std::optional<NoGradGuard<T>> guard;
    if (!create_graph) guard.emplace(tape);

    std::vector<std::optional<Var<T>>> adj(end);
    if (reach[output.id()]) adj[output.id()] = tape.scalar(T(1));

    std::vector<char> need;
    std::vector<Var<T>> local;
    for (std::size_t id = end; id-- > begin;) {
        if (!adj[id] || !reach[id]) continue;
        const auto& n = tape.node(id);
        if (n.op == Op::leaf) continue;
        need.assign(n.inputs.size(), 0);
        bool any = false;
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
            need[i] = (n.inputs[i] >= begin && reach[n.inputs[i]]) ? 1 : 0;
            any = any || need[i];
        }
        if (!any) continue;
        detail::backward_rule(tape, id, *adj[id], need, local);
        for (std::size_t i = 0; i < n.inputs.size(); ++i) {
            if (!need[i]) continue;
            auto& slot = adj[n.inputs[i]];
            slot = slot ? add(*slot, local[i]) : local[i];
        }
    }

    std::vector<Var<T>> result;
    result.reserve(wrt.size());
    for (const auto& w : wrt) {
        if (w.id() < end && adj[w.id()]) {
            result.push_back(*adj[w.id()]);
        } else {
            result.push_back(tape.constant(Matrix<T>::Zero(w.rows(), w.cols())));
        }
    }
    return result;
}

template <typename T>
std::vector<Var<T>> gradient(const Var<T>& output, std::initializer_list<Var<T>> wrt, bool create_graph = false) {
    std::vector<Var<T>> v(wrt);
    return gradient(output, std::span<const Var<T>>(v), create_graph);
}

}  // namespace xfit::ad
