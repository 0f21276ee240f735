#pragma once

// Central finite differences, used as the independent oracle for gradients.
// Only evaluates function values; never touches the tape's adjoint rules.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>

namespace xfit::testing {

using VecD = Eigen::VectorXd;

inline VecD central_difference(const std::function<double(const VecD&)>& f, const VecD& x, double h = 1e-6) {
    VecD g(x.size());
    VecD xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double fp = f(xp);
        xp[i] = orig - h;
        const double fm = f(xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2 * h);
    }
    return g;
}

// Central differences of a vector-valued function: column i is d f / d x_i.
inline Eigen::MatrixXd central_jacobian(const std::function<VecD(const VecD&)>& f, const VecD& x, double h = 1e-5) {
    const VecD f0 = f(x);
    Eigen::MatrixXd jac(f0.size(), x.size());
    VecD xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const VecD fp = f(xp);
        xp[i] = orig - h;
        const VecD fm = f(xp);
        xp[i] = orig;
        jac.col(i) = (fp - fm) / (2 * h);
    }
    return jac;
}

inline double relative_error(const VecD& a, const VecD& b) {
    const double denom = std::max({a.norm(), b.norm(), 1e-12});
    return (a - b).norm() / denom;
}

}  // namespace xfit::testing
