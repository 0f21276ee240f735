#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "xfit/autodiff.hpp"
#include "xfit/model/params.hpp"

namespace xfit::upstream {

using model::Parameters;

// Builds a scalar loss from parameter nodes bound on one tape.
template <typename T>
using Objective = std::function<ad::Var<T>(std::span<const ad::Var<T>>)>;

template <typename T>
struct StepResult {
    Parameters<T> params;
    // MAML/FoMAML: the meta-gradient g, params = theta - beta * g.
    // Reptile: theta' - theta, params = theta + beta * direction.
    Parameters<T> direction;
    T support_loss{};
    std::optional<T> query_loss;
};

namespace detail {

template <typename T>
std::pair<T, Parameters<T>> value_and_grad(const Objective<T>& f, const Parameters<T>& at) {
    ad::Tape<T> tape;
    auto vars = model::bind(tape, at);
    auto loss = f(vars);
    auto g = ad::gradient(loss, std::span<const ad::Var<T>>(vars));
    return {loss.item(), model::collect<T>(g, at)};
}

template <typename T>
Parameters<T> minus_scaled(const Parameters<T>& theta, const Parameters<T>& g, T beta) {
    Parameters<T> out = theta;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= beta * g[i];
    return out;
}

}  // namespace detail

// theta' = theta - alpha * grad L_s(theta), recorded with create_graph so the
// query gradient flows through the inner update.
template <typename T>
StepResult<T> maml_step(const Parameters<T>& theta, const Objective<T>& support, const Objective<T>& query, T alpha,
                        T beta) {
    ad::Tape<T> tape;
    auto vars = model::bind(tape, theta);
    auto ls = support(vars);
    auto g = ad::gradient(ls, std::span<const ad::Var<T>>(vars), true);
    std::vector<ad::Var<T>> fast;
    fast.reserve(vars.size());
    for (std::size_t i = 0; i < vars.size(); ++i) fast.push_back(ad::sub(vars[i], ad::scale(g[i], alpha)));
    auto lq = query(fast);
    auto mg = ad::gradient(lq, std::span<const ad::Var<T>>(vars));
    StepResult<T> r;
    r.direction = model::collect<T>(mg, theta);
    r.params = detail::minus_scaled(theta, r.direction, beta);
    r.support_loss = ls.item();
    r.query_loss = lq.item();
    return r;
}

// Query gradient taken at the fast weights, no second-order term.
template <typename T>
StepResult<T> fomaml_step(const Parameters<T>& theta, const Objective<T>& support, const Objective<T>& query, T alpha,
                          T beta) {
    auto [ls, gs] = detail::value_and_grad(support, theta);
    const Parameters<T> fast = detail::minus_scaled(theta, gs, alpha);
    auto [lq, gq] = detail::value_and_grad(query, fast);
    StepResult<T> r;
    r.direction = std::move(gq);
    r.params = detail::minus_scaled(theta, r.direction, beta);
    r.support_loss = ls;
    r.query_loss = lq;
    return r;
}

// k = inner.size() plain gradient steps from theta, then theta + beta * (theta' - theta).
// The displacement is accumulated directly, so with k = 1 the result is
// theta - beta * (alpha * grad) to the last bit.
template <typename T>
StepResult<T> reptile_step(const Parameters<T>& theta, std::span<const Objective<T>> inner, T alpha, T beta) {
    if (inner.empty()) throw UsageError("reptile_step: needs at least one inner step");
    StepResult<T> r;
    Parameters<T> current = theta;
    for (std::size_t s = 0; s < inner.size(); ++s) {
        auto [loss, g] = detail::value_and_grad(inner[s], current);
        if (s == 0) {
            r.support_loss = loss;
            r.direction = g;
            for (std::size_t i = 0; i < g.size(); ++i) r.direction[i] = -(alpha * g[i]);
        } else {
            for (std::size_t i = 0; i < g.size(); ++i) r.direction[i] -= alpha * g[i];
        }
        if (s + 1 < inner.size()) {
            for (std::size_t i = 0; i < current.size(); ++i) current[i] = theta[i] + r.direction[i];
        }
    }
    r.params = theta;
    for (std::size_t i = 0; i < r.params.size(); ++i) r.params[i] += beta * r.direction[i];
    return r;
}

}  // namespace xfit::upstream
