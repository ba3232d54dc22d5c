#include "sonetlab/activation.hpp"

#include <cmath>

#include "sonetlab/errors.hpp"

namespace sonetlab {

double activate(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::identity:
      return x;
    case ActivationKind::tanh:
      return std::tanh(x);
    case ActivationKind::elu:
      return x > 0.0 ? x : std::expm1(x);
    case ActivationKind::softplus:
      // log(1 + e^x) without overflow for large |x|.
      return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    case ActivationKind::relu:
      return x > 0.0 ? x : 0.0;
  }
  throw InternalError("unknown activation kind");
}

double activate_derivative(ActivationKind kind, double x) {
  switch (kind) {
    case ActivationKind::identity:
      return 1.0;
    case ActivationKind::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case ActivationKind::elu:
      return x > 0.0 ? 1.0 : std::exp(x);
    case ActivationKind::softplus:
      // logistic(x), evaluated from the side that cannot overflow
      return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
    case ActivationKind::relu:
      return x > 0.0 ? 1.0 : 0.0;
  }
  throw InternalError("unknown activation kind");
}

bool strictly_increasing(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::identity:
    case ActivationKind::tanh:
    case ActivationKind::elu:
    case ActivationKind::softplus:
      return true;
    case ActivationKind::relu:
      return false;
  }
  throw InternalError("unknown activation kind");
}

std::string to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::identity:
      return "identity";
    case ActivationKind::tanh:
      return "tanh";
    case ActivationKind::elu:
      return "elu";
    case ActivationKind::softplus:
      return "softplus";
    case ActivationKind::relu:
      return "relu";
  }
  throw InternalError("unknown activation kind");
}

ActivationKind activation_from_string(const std::string& name) {
  if (name == "identity") return ActivationKind::identity;
  if (name == "tanh") return ActivationKind::tanh;
  if (name == "elu") return ActivationKind::elu;
  if (name == "softplus") return ActivationKind::softplus;
  if (name == "relu") return ActivationKind::relu;
  throw ContractViolation("unknown activation: " + name);
}

}  // namespace sonetlab
