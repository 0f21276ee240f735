#pragma once

#include <cmath>
#include <string>

#include "xfit/errors.hpp"
#include "xfit/model/params.hpp"

namespace xfit {

enum class OptimizerKind { sgd, adam };

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::sgd;
    if (s == "adam") return OptimizerKind::adam;
    throw UsageError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

// Plain step or Adam (beta1 0.9, beta2 0.999, eps 1e-8, bias corrected).
// Moments live alongside the optimizer so runs can be resumed exactly.
template <typename T>
class Optimizer {
public:
    Optimizer(OptimizerKind kind, const model::Parameters<T>& like) : kind_(kind) {
        if (kind_ == OptimizerKind::adam) {
            m_ = like.zeros_like();
            v_ = like.zeros_like();
        }
    }

    [[nodiscard]] OptimizerKind kind() const { return kind_; }
    [[nodiscard]] long steps() const { return t_; }

    void apply(model::Parameters<T>& params, const model::Parameters<T>& grad, double lr) {
        ++t_;
        const T a = static_cast<T>(lr);
        if (kind_ == OptimizerKind::sgd) {
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= a * grad[i];
            return;
        }
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        const T step = static_cast<T>(lr / c1);
        const T root_c2 = static_cast<T>(std::sqrt(c2));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = T(beta1) * m_[i] + T(1 - beta1) * grad[i];
            v_[i] = T(beta2) * v_[i] + T(1 - beta2) * grad[i].cwiseProduct(grad[i]);
            params[i].array() -= step * m_[i].array() / (v_[i].array().sqrt() / root_c2 + T(eps));
        }
    }

    // Moment blocks named "m.<block>" and "v.<block>"; empty for sgd.
    [[nodiscard]] model::Parameters<T> state() const {
        model::Parameters<T> out;
        for (std::size_t i = 0; i < m_.size(); ++i) out.add("m." + m_.name(i), m_[i]);
        for (std::size_t i = 0; i < v_.size(); ++i) out.add("v." + v_.name(i), v_[i]);
        return out;
    }

    void restore(const model::Parameters<T>& state, long steps) {
        t_ = steps;
        for (std::size_t i = 0; i < m_.size(); ++i) m_[i] = state.at("m." + m_.name(i));
        for (std::size_t i = 0; i < v_.size(); ++i) v_[i] = state.at("v." + v_.name(i));
    }

private:
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    OptimizerKind kind_;
    model::Parameters<T> m_;
    model::Parameters<T> v_;
    long t_ = 0;
};

}  // namespace xfit

