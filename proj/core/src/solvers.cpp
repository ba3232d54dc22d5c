#include "sonetlab/solvers.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "sonetlab/errors.hpp"

namespace sonetlab::solvers {

namespace {

// Dormand-Prince 5(4) tableau. Constants are the exact rationals rendered to
// 64-bit floats; stage 7 coincides with the 5th-order solution (FSAL).
constexpr double kC[8] = {0.0, 0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA21 = 1.0 / 5;
constexpr double kA31 = 3.0 / 40, kA32 = 9.0 / 40;
constexpr double kA41 = 44.0 / 45, kA42 = -56.0 / 15, kA43 = 32.0 / 9;
constexpr double kA51 = 19372.0 / 6561, kA52 = -25360.0 / 2187, kA53 = 64448.0 / 6561,
                 kA54 = -212.0 / 729;
constexpr double kA61 = 9017.0 / 3168, kA62 = -355.0 / 33, kA63 = 46732.0 / 5247,
                 kA64 = 49.0 / 176, kA65 = -5103.0 / 18656;
// 5th-order weights (b2 = b7 = 0 omitted where convenient).
constexpr double kB1 = 35.0 / 384, kB3 = 500.0 / 1113, kB4 = 125.0 / 192,
                 kB5 = -2187.0 / 6784, kB6 = 11.0 / 84;
// b - b*: error-estimate weights over stages 1..7.
constexpr double kE1 = 71.0 / 57600, kE3 = -71.0 / 16695, kE4 = 71.0 / 1920,
                 kE5 = -17253.0 / 339200, kE6 = 22.0 / 525, kE7 = -1.0 / 40;

struct ValueBackend {
  const ValueField& f;
  using State = Tensor;
  State eval(double t, const State& y) { return f(t, y); }
  State lincomb(std::span<const State* const> s, std::span<const double> c) {
    Tensor out(s[0]->shape());
    for (std::size_t k = 0; k < s.size(); ++k) {
      const Tensor& v = *s[k];
      require_same_shape(out, v, "solver lincomb");
      const double ck = c[k];
      for (std::int64_t i = 0; i < out.size(); ++i) out[i] += ck * v[i];
    }
    return out;
  }
  const Tensor& tensor(const State& y) const { return y; }
};

struct TapeBackend {
  Tape& tape;
  const TapeField& f;
  using State = NodeId;
  State eval(double t, State y) { return f(tape, t, y); }
  State lincomb(std::span<const State* const> s, std::span<const double> c) {
    std::vector<NodeId> ids(s.size());
    for (std::size_t k = 0; k < s.size(); ++k) ids[k] = *s[k];
    return tape.lincomb(ids, c);
  }
  const Tensor& tensor(State y) const { return tape.value(y); }
};

void require_interval(double t0, double t1, double h_or_tol, const char* what) {
  if (!(t1 > t0)) throw ContractViolation("integrate: t1 must exceed t0");
  if (!(h_or_tol > 0.0)) throw ContractViolation(std::string("integrate: ") + what);
}

long fixed_step_count(double t0, double t1, double h) {
  const long n = static_cast<long>(std::ceil((t1 - t0) / h - 1e-9));
  return std::max<long>(n, 1);
}

template <class B>
typename B::State fixed_step_core(B& b, typename B::State y0, double t0, double t1, double h,
                                  bool rk4, StepTrace& trace) {
  using State = typename B::State;
  if (!all_finite(b.tensor(y0))) {
    throw SolverDivergence("integrate: non-finite initial state", trace);
  }
  const long steps = fixed_step_count(t0, t1, h);
  trace.accepted_times.push_back(t0);
  State y = y0;
  double t = t0;
  for (long s = 0; s < steps; ++s) {
    const bool last = (s == steps - 1);
    const double t_next = last ? t1 : t0 + static_cast<double>(s + 1) * h;
    const double hs = t_next - t;  // final step truncated
    if (!rk4) {
      State k = b.eval(t, y);
      trace.rhs_evaluations += 1;
      const State* in[] = {&y, &k};
      const double c[] = {1.0, hs};
      y = b.lincomb(in, c);
    } else {
      State k1 = b.eval(t, y);
      const State* in2[] = {&y, &k1};
      const double c2[] = {1.0, hs / 2};
      State y2 = b.lincomb(in2, c2);
      State k2 = b.eval(t + hs / 2, y2);
      const State* in3[] = {&y, &k2};
      const double c3[] = {1.0, hs / 2};
      State y3 = b.lincomb(in3, c3);
      State k3 = b.eval(t + hs / 2, y3);
      const State* in4[] = {&y, &k3};
      const double c4[] = {1.0, hs};
      State y4 = b.lincomb(in4, c4);
      State k4 = b.eval(t + hs, y4);
      trace.rhs_evaluations += 4;
      const State* in5[] = {&y, &k1, &k2, &k3, &k4};
      const double c5[] = {1.0, hs / 6, hs / 3, hs / 3, hs / 6};
      y = b.lincomb(in5, c5);
    }
    if (!all_finite(b.tensor(y))) {
      throw SolverDivergence("integrate: state diverged at t=" + std::to_string(t_next), trace);
    }
    t = t_next;
    trace.accepted_times.push_back(t);
  }
  return y;
}

Tensor weighted_stage_sum(std::span<const Tensor* const> ks, std::span<const double> w) {
  Tensor out(ks[0]->shape());
  for (std::size_t k = 0; k < ks.size(); ++k) {
    const double wk = w[k];
    const Tensor& v = *ks[k];
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += wk * v[i];
  }
  return out;
}

template <class B>
typename B::State dopri5_core(B& b, typename B::State y0, double t0, double t1, double tol,
                              const SolverConfig& cfg, StepTrace& trace) {
  using State = typename B::State;
  if (!(tol > 0.0)) throw ContractViolation("dopri5: tol must be positive");
  if (!(t1 > t0)) throw ContractViolation("dopri5: t1 must exceed t0");
  if (!all_finite(b.tensor(y0))) {
    throw SolverDivergence("dopri5: non-finite initial state", trace);
  }

  const double span = t1 - t0;
  const double h_min = 1e-12 * span;

  trace.accepted_times.push_back(t0);
  State y = y0;
  double t = t0;
  State k1 = b.eval(t0, y0);  // becomes the FSAL stage after each acceptance
  trace.rhs_evaluations += 1;

  // Default policy: try the whole remaining interval first and let the error
  // controller cut it down. cfg.initial_step (e.g. from the starting-step
  // heuristic) overrides.
  double h = span;
  if (cfg.initial_step > 0.0) h = std::min(cfg.initial_step, span);

  int trials = 0;
  while (t < t1) {
    if (h < h_min) {
      throw SolverDivergence("dopri5: step size underflow at t=" + std::to_string(t), trace);
    }
    if (++trials > cfg.max_steps) {
      throw SolverDivergence("dopri5: max_steps exceeded", trace);
    }
    const bool last = (h >= t1 - t);
    if (last) h = t1 - t;

    const State* s2[] = {&y, &k1};
    const double c2[] = {1.0, h * kA21};
    State y2 = b.lincomb(s2, c2);
    State k2 = b.eval(t + kC[2] * h, y2);

    const State* s3[] = {&y, &k1, &k2};
    const double c3[] = {1.0, h * kA31, h * kA32};
    State y3 = b.lincomb(s3, c3);
    State k3 = b.eval(t + kC[3] * h, y3);

    const State* s4[] = {&y, &k1, &k2, &k3};
    const double c4[] = {1.0, h * kA41, h * kA42, h * kA43};
    State y4 = b.lincomb(s4, c4);
    State k4 = b.eval(t + kC[4] * h, y4);

    const State* s5[] = {&y, &k1, &k2, &k3, &k4};
    const double c5[] = {1.0, h * kA51, h * kA52, h * kA53, h * kA54};
    State y5 = b.lincomb(s5, c5);
    State k5 = b.eval(t + kC[5] * h, y5);

    const State* s6[] = {&y, &k1, &k2, &k3, &k4, &k5};
    const double c6[] = {1.0, h * kA61, h * kA62, h * kA63, h * kA64, h * kA65};
    State y6 = b.lincomb(s6, c6);
    State k6 = b.eval(t + h, y6);

    // 5th-order candidate; also the 7th stage point (FSAL).
    const State* sc[] = {&y, &k1, &k3, &k4, &k5, &k6};
    const double cc[] = {1.0, h * kB1, h * kB3, h * kB4, h * kB5, h * kB6};
    State y_cand = b.lincomb(sc, cc);
    State k7 = b.eval(t + h, y_cand);
    trace.rhs_evaluations += 6;

    const Tensor* ek[] = {&b.tensor(k1), &b.tensor(k3), &b.tensor(k4),
                          &b.tensor(k5), &b.tensor(k6), &b.tensor(k7)};
    const double ew[] = {h * kE1, h * kE3, h * kE4, h * kE5, h * kE6, h * kE7};
    const Tensor err = weighted_stage_sum(ek, ew);

    double enorm = error_norm(err, b.tensor(y), b.tensor(y_cand), tol);
    if (!std::isfinite(enorm)) enorm = HUGE_VAL;  // non-finite trial: reject and shrink

    if (enorm <= 1.0) {
      t = last ? t1 : t + h;
      y = y_cand;
      k1 = k7;
      trace.accepted_times.push_back(t);
      h = propose_next_step(h, enorm, cfg);
    } else {
      trace.rejected_count += 1;
      h = propose_next_step(h, enorm, cfg);
    }
  }
  return y;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::euler:
      return "euler";
    case Method::rk4:
      return "rk4";
    case Method::dopri5:
      return "dopri5";
    case Method::euler_sequential:
      return "euler_sequential";
  }
  throw InternalError("unknown solver method");
}

Method method_from_string(const std::string& name) {
  if (name == "euler") return Method::euler;
  if (name == "rk4") return Method::rk4;
  if (name == "dopri5") return Method::dopri5;
  if (name == "euler_sequential") return Method::euler_sequential;
  throw ContractViolation("unknown solver method: " + name);
}

std::string trace_json_line(const StepTrace& trace, double tol) {
  nlohmann::json j;
  j["tol"] = tol;
  j["accepted_times"] = trace.accepted_times;
  j["rejected"] = trace.rejected_count;
  j["rhs_evaluations"] = trace.rhs_evaluations;
  return j.dump();
}

double error_norm(const Tensor& err, const Tensor& y_old, const Tensor& y_new, double tol) {
  require_same_shape(err, y_old, "error_norm");
  require_same_shape(err, y_new, "error_norm");
  double acc = 0.0;
  for (std::int64_t i = 0; i < err.size(); ++i) {
    const double scale = tol + tol * std::max(std::abs(y_old[i]), std::abs(y_new[i]));
    const double r = err[i] / scale;
    acc += r * r;
  }
  return std::sqrt(acc / static_cast<double>(err.size()));
}

double propose_next_step(double h, double err_norm_value, const SolverConfig& cfg) {
  if (!(h > 0.0)) throw ContractViolation("propose_next_step: h must be positive");
  double factor = cfg.max_factor;
  if (err_norm_value > 0.0) {
    factor = cfg.safety * std::pow(err_norm_value, -0.2);
    factor = std::clamp(factor, cfg.min_factor, cfg.max_factor);
  }
  return h * factor;
}

double initial_step_heuristic(const ValueField& f, const Tensor& y0, double t0, double t1,
                              double tol) {
  require_interval(t0, t1, tol, "tol must be positive");
  const double span = t1 - t0;
  const Tensor f0 = f(t0, y0);
  const double d0 = norm2(y0);
  const double d1 = norm2(f0);
  if (d1 == 0.0) return span / 10.0;  // field vanishes at the initial point

  double h0 = (d0 < 1e-5) ? 1e-6 : 0.01 * d0 / d1;
  h0 = std::min(h0, span);
  // One explicit Euler probe to estimate the local derivative scale.
  const Tensor y1 = axpy(h0, f0, y0);
  const Tensor f1 = f(t0 + h0, y1);
  const double d2 = norm2(sub(f1, f0)) / h0;
  const double dm = std::max(d1, d2);
  double h1;
  if (dm <= 1e-15) {
    h1 = std::max(1e-6, h0 * 1e-3);
  } else {
    // target local error ~ tol over one 5th-order step
    h1 = std::pow(tol / dm, 1.0 / 5.0);
  }
  return std::min({100.0 * h0, h1, span});
}

ValueOutcome euler_integrate(const ValueField& f, const Tensor& y0, double t0, double t1,
                             double h) {
  require_interval(t0, t1, h, "h must be positive");
  ValueBackend b{f};
  ValueOutcome out;
  out.y1 = fixed_step_core(b, y0, t0, t1, h, /*rk4=*/false, out.trace);
  return out;
}

ValueOutcome rk4_integrate(const ValueField& f, const Tensor& y0, double t0, double t1,
                           double h) {
  require_interval(t0, t1, h, "h must be positive");
  ValueBackend b{f};
  ValueOutcome out;
  out.y1 = fixed_step_core(b, y0, t0, t1, h, /*rk4=*/true, out.trace);
  return out;
}

ValueOutcome dopri5_integrate(const ValueField& f, const Tensor& y0, double t0, double t1,
                              double tol, const SolverConfig& cfg) {
  ValueBackend b{f};
  ValueOutcome out;
  out.y1 = dopri5_core(b, y0, t0, t1, tol, cfg, out.trace);
  return out;
}

TapeOutcome euler_integrate(Tape& tape, const TapeField& f, NodeId y0, double t0, double t1,
                            double h) {
  require_interval(t0, t1, h, "h must be positive");
  TapeBackend b{tape, f};
  TapeOutcome out;
  out.y1 = fixed_step_core(b, y0, t0, t1, h, /*rk4=*/false, out.trace);
  return out;
}

TapeOutcome rk4_integrate(Tape& tape, const TapeField& f, NodeId y0, double t0, double t1,
                          double h) {
  require_interval(t0, t1, h, "h must be positive");
  TapeBackend b{tape, f};
  TapeOutcome out;
  out.y1 = fixed_step_core(b, y0, t0, t1, h, /*rk4=*/true, out.trace);
  return out;
}

TapeOutcome dopri5_integrate(Tape& tape, const TapeField& f, NodeId y0, double t0, double t1,
                             double tol, const SolverConfig& cfg) {
  TapeBackend b{tape, f};
  TapeOutcome out;
  out.y1 = dopri5_core(b, y0, t0, t1, tol, cfg, out.trace);
  return out;
}

ValueOutcome integrate(const ValueField& f, const Tensor& y0, double t0, double t1,
                       const SolverConfig& cfg) {
  switch (cfg.method) {
    case Method::euler:
      return euler_integrate(f, y0, t0, t1, cfg.h);
    case Method::rk4:
      return rk4_integrate(f, y0, t0, t1, cfg.h);
    case Method::dopri5:
      return dopri5_integrate(f, y0, t0, t1, cfg.tol, cfg);
    case Method::euler_sequential:
      throw ContractViolation("euler_sequential is a block-level scheme; use the blocks module");
  }
  throw InternalError("unknown solver method");
}

TapeOutcome integrate(Tape& tape, const TapeField& f, NodeId y0, double t0, double t1,
                      const SolverConfig& cfg) {
  switch (cfg.method) {
    case Method::euler:
      return euler_integrate(tape, f, y0, t0, t1, cfg.h);
    case Method::rk4:
      return rk4_integrate(tape, f, y0, t0, t1, cfg.h);
    case Method::dopri5:
      return dopri5_integrate(tape, f, y0, t0, t1, cfg.tol, cfg);
    case Method::euler_sequential:
      throw ContractViolation("euler_sequential is a block-level scheme; use the blocks module");
  }
  throw InternalError("unknown solver method");
}

}  // namespace sonetlab::solvers
