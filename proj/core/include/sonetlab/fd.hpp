#pragma once

#include <functional>

#include "sonetlab/tensor.hpp"

namespace sonetlab {

// Central-difference gradient oracle: (f(x + h e_i) - f(x - h e_i)) / (2h)
// per coordinate. Deliberately independent of the tape; used to cross-check
// backprop throughout the test suites.
Tensor fd_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                   double h = 1e-5);

// max_i |a_i - b_i| / max(1, |a_i|, |b_i|), the relative-error metric used by
// the gradient-exactness checks.
double max_relative_error(const Tensor& a, const Tensor& b);

}  // namespace sonetlab
