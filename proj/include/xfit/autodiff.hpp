#pragma once

// Reverse-mode differentiation over dense Eigen arrays with
// differentiable adjoints (create_graph) for second-order use.

#include "xfit/autodiff/gradient.hpp"
#include "xfit/autodiff/ops.hpp"
#include "xfit/autodiff/tape.hpp"
