#pragma once

#include <string>

namespace sonetlab {

// Elementwise nonlinearities. tanh, elu and softplus have strictly positive
// derivative everywhere; relu does not and is kept for the ResNet baseline
// only. identity is the linear-analysis activation (derivative exactly 1).
enum class ActivationKind { identity, tanh, elu, softplus, relu };

double activate(ActivationKind kind, double x);
double activate_derivative(ActivationKind kind, double x);

// True iff the derivative is strictly positive on all of R.
bool strictly_increasing(ActivationKind kind);

std::string to_string(ActivationKind kind);
ActivationKind activation_from_string(const std::string& name);

}  // namespace sonetlab
