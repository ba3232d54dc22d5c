#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sonetlab/tape.hpp"
#include "sonetlab/tensor.hpp"

namespace sonetlab::solvers {

enum class Method { euler, rk4, dopri5, euler_sequential };

std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct SolverConfig {
  Method method = Method::dopri5;
  double h = 1.0;       // fixed-step methods
  double tol = 0.1;     // dopri5 (rtol = atol = tol)
  double safety = 0.9;
  double min_factor = 0.2;
  double max_factor = 10.0;
  int max_steps = 10000;
  // dopri5 starting step; <= 0 means "try the whole interval and let the
  // controller cut it down" (see initial_step_heuristic for the alternative).
  double initial_step = 0.0;
};

struct StepTrace {
  std::vector<double> accepted_times;  // includes both endpoints
  int rejected_count = 0;
  // Stage evaluations of the right-hand side. For dopri5 this follows FSAL
  // accounting: 6 per trial step plus the single initial evaluation. The
  // initial-step heuristic's one probe evaluation is not included.
  std::int64_t rhs_evaluations = 0;

  int accepted_steps() const {
    return accepted_times.empty() ? 0 : static_cast<int>(accepted_times.size()) - 1;
  }
};

// JSON-lines serialization used by the step-trace logs.
std::string trace_json_line(const StepTrace& trace, double tol);

class SolverDivergence : public std::runtime_error {
 public:
  SolverDivergence(const std::string& what, StepTrace trace)
      : std::runtime_error(what), trace(std::move(trace)) {}
  StepTrace trace;
};

// Right-hand sides. The value field maps (t, y) -> dy/dt on plain tensors;
// the tape field records the same computation on a tape for reverse-mode
// differentiation through the unrolled solve.
using ValueField = std::function<Tensor(double t, const Tensor& y)>;
using TapeField = std::function<NodeId(Tape& tape, double t, NodeId y)>;

// Mixed-tolerance RMS norm of a step-error estimate:
//   sqrt(mean_i (err_i / (tol + tol * max(|y_old_i|, |y_new_i|)))^2).
// A step is accepted iff this is <= 1.
double error_norm(const Tensor& err, const Tensor& y_old, const Tensor& y_new, double tol);

// Elementary step controller: h * clamp(safety * err^(-1/5), min_f, max_f).
double propose_next_step(double h, double err_norm_value, const SolverConfig& cfg = {});

// Hairer-style two-trial starting step: a scale estimate from |y0|/|f(t0,y0)|
// refined by one explicit Euler probe, clipped to the interval length.
// Falls back to (t1-t0)/10 when the field vanishes at the initial point.
double initial_step_heuristic(const ValueField& f, const Tensor& y0, double t0, double t1,
                              double tol);

struct ValueOutcome {
  Tensor y1;
  StepTrace trace;
};

struct TapeOutcome {
  NodeId y1 = kNoNode;
  StepTrace trace;
};

ValueOutcome euler_integrate(const ValueField& f, const Tensor& y0, double t0, double t1,
                             double h);
ValueOutcome rk4_integrate(const ValueField& f, const Tensor& y0, double t0, double t1,
                           double h);
ValueOutcome dopri5_integrate(const ValueField& f, const Tensor& y0, double t0, double t1,
                              double tol, const SolverConfig& cfg = {});

TapeOutcome euler_integrate(Tape& tape, const TapeField& f, NodeId y0, double t0, double t1,
                            double h);
TapeOutcome rk4_integrate(Tape& tape, const TapeField& f, NodeId y0, double t0, double t1,
                          double h);
TapeOutcome dopri5_integrate(Tape& tape, const TapeField& f, NodeId y0, double t0, double t1,
                             double tol, const SolverConfig& cfg = {});

// Dispatch on cfg.method (euler_sequential is a block-level scheme and is
// rejected here; see blocks::skew_block_forward).
ValueOutcome integrate(const ValueField& f, const Tensor& y0, double t0, double t1,
                       const SolverConfig& cfg);
TapeOutcome integrate(Tape& tape, const TapeField& f, NodeId y0, double t0, double t1,
                      const SolverConfig& cfg);

}  // namespace sonetlab::solvers
