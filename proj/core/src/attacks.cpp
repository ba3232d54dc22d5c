#include "sonetlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "sonetlab/errors.hpp"
#include "sonetlab/ops.hpp"
#include "sonetlab/parallel.hpp"
#include "sonetlab/solvers.hpp"

namespace sonetlab::attacks {

using blocks::Model;

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::pgd_linf:
      return "pgd_linf";
    case AttackKind::pgd_l2:
      return "pgd_l2";
    case AttackKind::cw_linf:
      return "cw_linf";
    case AttackKind::spsa:
      return "spsa";
  }
  throw InternalError("unknown attack kind");
}

AttackKind attack_kind_from_string(const std::string& name) {
  if (name == "pgd_linf") return AttackKind::pgd_linf;
  if (name == "pgd_l2") return AttackKind::pgd_l2;
  if (name == "cw_linf") return AttackKind::cw_linf;
  if (name == "spsa") return AttackKind::spsa;
  throw ContractViolation("unknown attack kind: " + name);
}

AttackConfig AttackConfig::defaults(AttackKind kind) {
  AttackConfig c;
  c.kind = kind;
  switch (kind) {
    case AttackKind::pgd_linf:
      c.epsilon = 0.031;
      c.eta1 = 0.003;
      c.iterations = 20;
      break;
    case AttackKind::pgd_l2:
      c.epsilon = 0.5;
      c.eta1 = 0.1;
      c.iterations = 20;
      break;
    case AttackKind::cw_linf:
      c.epsilon = 0.031;
      c.eta1 = 0.003;
      c.iterations = 100;
      break;
    case AttackKind::spsa:
      c.epsilon = 0.031;
      c.eta1 = 0.01;
      c.iterations = 20;
      c.spsa_samples = 32;
      c.spsa_delta = 0.01;
      break;
  }
  return c;
}

std::string AttackConfig::label() const {
  return to_string(kind) + "^" + std::to_string(iterations);
}

namespace {

void validate(const AttackConfig& cfg) {
  if (cfg.epsilon < 0.0 || cfg.eta1 <= 0.0 || cfg.iterations < 1) {
    throw ContractViolation("attack config out of contract");
  }
}

// Project into the L-inf ball around x0 intersected with the pixel domain.
void project_linf(Tensor& x, const Tensor& x0, double eps) {
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double lo = std::max(x0[i] - eps, 0.0);
    const double hi = std::min(x0[i] + eps, 1.0);
    x[i] = std::clamp(x[i], lo, hi);
  }
}

void project_l2(Tensor& x, const Tensor& x0, double eps) {
  Tensor d = sub(x, x0);
  const double n = norm2(d);
  if (n > eps && n > 0.0) {
    const double s = eps / n;
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = x0[i] + s * d[i];
  }
  // Clipping into [0,1]^n never increases any |x_i - x0_i| for x0 in the
  // domain, so the ball constraint survives it.
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], 0.0, 1.0);
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void scrub_nonfinite(Tensor& g, AttackStats* stats) {
  std::int64_t bad = 0;
  for (std::int64_t i = 0; i < g.size(); ++i) {
    if (!std::isfinite(g[i])) {
      g[i] = 0.0;
      ++bad;
    }
  }
  if (bad && stats) stats->nonfinite_coordinates += bad;
}

enum class LossKind { ce, margin };

Tensor input_gradient(const Model& model, const Tensor& x, int label, LossKind loss,
                      AttackStats* stats) {
  Tape tape;
  try {
    Model::Binding binding = model.bind(tape);
    NodeId xin = tape.leaf(x);
    NodeId logits = model.logits(tape, binding, xin);
    NodeId objective = loss == LossKind::ce ? tape.cross_entropy(logits, label)
                                            : tape.cw_margin(logits, label);
    GradientMap grads = tape.backprop(objective, Tensor::scalar(1.0));
    Tensor g = grads.at(xin);
    scrub_nonfinite(g, stats);
    return g;
  } catch (const solvers::SolverDivergence&) {
    if (stats) stats->diverged_forwards += 1;
    return Tensor(x.shape());  // treated as a zero gradient for this query
  }
}

double margin_value(const Model& model, const Tensor& x, int label, AttackStats* stats) {
  try {
    return cw_margin_value(model.logits_value(x), label);
  } catch (const solvers::SolverDivergence&) {
    if (stats) stats->diverged_forwards += 1;
    return HUGE_VAL;  // treat an unevaluable point as non-adversarial
  }
}

}  // namespace

Tensor input_gradient_ce(const Model& model, const Tensor& x, int label, AttackStats* stats) {
  return input_gradient(model, x, label, LossKind::ce, stats);
}

Tensor input_gradient_margin(const Model& model, const Tensor& x, int label, AttackStats* stats) {
  return input_gradient(model, x, label, LossKind::margin, stats);
}

Tensor pgd_linf(const Model& model, const Tensor& x, int label, const AttackConfig& cfg,
                AttackStats* stats) {
  validate(cfg);
  Tensor adv = x;
  for (int k = 0; k < cfg.iterations; ++k) {
    Tensor g = input_gradient_ce(model, adv, label, stats);
    for (std::int64_t i = 0; i < adv.size(); ++i) adv[i] += cfg.eta1 * sign(g[i]);
    project_linf(adv, x, cfg.epsilon);
  }
  return adv;
}

Tensor pgd_l2(const Model& model, const Tensor& x, int label, const AttackConfig& cfg,
              AttackStats* stats) {
  validate(cfg);
  Tensor adv = x;
  for (int k = 0; k < cfg.iterations; ++k) {
    Tensor g = input_gradient_ce(model, adv, label, stats);
    const double n = norm2(g);
    if (n == 0.0) continue;  // normalization undefined; skip the step
    for (std::int64_t i = 0; i < adv.size(); ++i) adv[i] += cfg.eta1 * g[i] / n;
    project_l2(adv, x, cfg.epsilon);
  }
  return adv;
}

Tensor cw_linf(const Model& model, const Tensor& x, int label, const AttackConfig& cfg,
               AttackStats* stats) {
  validate(cfg);
  Tensor adv = x;
  if (margin_value(model, adv, label, stats) < 0.0) return adv;  // already misclassified
  for (int k = 0; k < cfg.iterations; ++k) {
    Tensor g = input_gradient_margin(model, adv, label, stats);
    // descend the margin: driving it negative means a successful attack
    for (std::int64_t i = 0; i < adv.size(); ++i) adv[i] -= cfg.eta1 * sign(g[i]);
    project_linf(adv, x, cfg.epsilon);
    if (margin_value(model, adv, label, stats) < 0.0) break;
  }
  return adv;
}

Tensor spsa_gradient_estimate(const Objective& f, const Tensor& x, double delta, int samples,
                              Rng& rng) {
  if (samples < 1 || delta <= 0.0) throw ContractViolation("spsa estimator config out of contract");
  Tensor ghat(x.shape());
  Tensor probe(x.shape());
  Tensor v(x.shape());
  for (int s = 0; s < samples; ++s) {
    for (std::int64_t i = 0; i < v.size(); ++i) v[i] = rng.rademacher();
    for (std::int64_t i = 0; i < v.size(); ++i) probe[i] = x[i] + delta * v[i];
    const double fp = f(probe);
    for (std::int64_t i = 0; i < v.size(); ++i) probe[i] = x[i] - delta * v[i];
    const double fm = f(probe);
    if (!std::isfinite(fp) || !std::isfinite(fm)) continue;
    const double slope = (fp - fm) / (2.0 * delta);
    for (std::int64_t i = 0; i < v.size(); ++i) ghat[i] += slope * v[i];
  }
  for (std::int64_t i = 0; i < ghat.size(); ++i) ghat[i] /= samples;
  return ghat;
}

Tensor spsa(const Model& model, const Tensor& x, int label, const AttackConfig& cfg, Rng& rng,
            AttackStats* stats) {
  validate(cfg);
  if (cfg.spsa_samples < 1 || cfg.spsa_delta <= 0.0) {
    throw ContractViolation("spsa config out of contract");
  }
  Tensor adv = x;
  if (margin_value(model, adv, label, stats) < 0.0) return adv;
  const Objective margin = [&](const Tensor& probe) {
    return margin_value(model, probe, label, stats);
  };
  for (int k = 0; k < cfg.iterations; ++k) {
    const Tensor ghat = spsa_gradient_estimate(margin, adv, cfg.spsa_delta, cfg.spsa_samples, rng);
    for (std::int64_t i = 0; i < adv.size(); ++i) adv[i] -= cfg.eta1 * sign(ghat[i]);
    project_linf(adv, x, cfg.epsilon);
    if (margin_value(model, adv, label, stats) < 0.0) break;
  }
  return adv;
}

Tensor run_attack(const Model& model, const Tensor& x, int label, const AttackConfig& cfg,
                  Rng& rng, AttackStats* stats) {
  switch (cfg.kind) {
    case AttackKind::pgd_linf:
      return pgd_linf(model, x, label, cfg, stats);
    case AttackKind::pgd_l2:
      return pgd_l2(model, x, label, cfg, stats);
    case AttackKind::cw_linf:
      return cw_linf(model, x, label, cfg, stats);
    case AttackKind::spsa:
      return spsa(model, x, label, cfg, rng, stats);
  }
  throw InternalError("unknown attack kind");
}

std::string RobustReport::to_json() const {
  nlohmann::json j;
  j["model"] = model_name;
  j["channels"] = channels;
  j["solver"] = solver_label;
  j["natural_accuracy"] = natural_accuracy;
  j["sample_count"] = sample_count;
  j["seed"] = seed;
  nlohmann::json arr = nlohmann::json::array();
  for (const PerAttackResult& r : attacks) {
    arr.push_back({{"attack", to_string(r.cfg.kind)},
                   {"epsilon", r.cfg.epsilon},
                   {"eta1", r.cfg.eta1},
                   {"iterations", r.cfg.iterations},
                   {"robust_accuracy", r.robust_accuracy()},
                   {"correct", r.correct},
                   {"total", r.total},
                   {"nonfinite_coordinates", r.stats.nonfinite_coordinates},
                   {"diverged_forwards", r.stats.diverged_forwards}});
  }
  j["attacks"] = arr;
  return j.dump(2);
}

std::string RobustReport::csv_header() {
  return "model,channels,attack,epsilon,steps,A_nat,A_rob,seed";
}

std::string RobustReport::to_csv_rows() const {
  std::ostringstream os;
  os.precision(6);
  if (attacks.empty()) {
    os << model_name << ',' << channels << ",none,0,0," << natural_accuracy << ",," << seed
       << '\n';
    return os.str();
  }
  for (const PerAttackResult& r : attacks) {
    os << model_name << ',' << channels << ',' << to_string(r.cfg.kind) << ',' << r.cfg.epsilon
       << ',' << r.cfg.iterations << ',' << natural_accuracy << ',' << r.robust_accuracy() << ','
       << seed << '\n';
  }
  return os.str();
}

RobustReport robust_eval(const Model& model, const data::Dataset& dataset,
                         std::span<const AttackConfig> cfgs, std::uint64_t seed) {
  if (dataset.size() == 0) throw ContractViolation("robust_eval: empty dataset");
  RobustReport report;
  report.model_name = blocks::to_string(model.spec.architecture);
  report.channels = model.spec.channels;
  report.solver_label = solvers::to_string(model.spec.solver.method);
  report.sample_count = dataset.size();
  report.seed = seed;

  const int n = dataset.size();
  std::vector<char> nat_correct(static_cast<std::size_t>(n), 0);
  parallel_for(n, [&](std::int64_t i) {
    nat_correct[static_cast<std::size_t>(i)] =
        model.predict(dataset.example(static_cast<int>(i))) ==
        dataset.labels[static_cast<std::size_t>(i)];
  });
  int nat = 0;
  for (char c : nat_correct) nat += c;
  report.natural_accuracy = static_cast<double>(nat) / n;

  Rng root(seed);
  for (std::size_t a = 0; a < cfgs.size(); ++a) {
    PerAttackResult result;
    result.cfg = cfgs[a];
    result.total = n;
    std::vector<char> correct(static_cast<std::size_t>(n), 0);
    std::vector<AttackStats> stats(static_cast<std::size_t>(n));
    parallel_for(n, [&](std::int64_t i) {
      // independent per-example streams so parallel order cannot matter
      Rng rng = root.child((a << 32) ^ static_cast<std::uint64_t>(i));
      const Tensor x = dataset.example(static_cast<int>(i));
      const int label = dataset.labels[static_cast<std::size_t>(i)];
      const Tensor adv =
          run_attack(model, x, label, cfgs[a], rng, &stats[static_cast<std::size_t>(i)]);
      correct[static_cast<std::size_t>(i)] = model.predict(adv) == label;
    });
    for (int i = 0; i < n; ++i) {
      result.correct += correct[static_cast<std::size_t>(i)];
      result.stats.merge(stats[static_cast<std::size_t>(i)]);
    }
    report.attacks.push_back(std::move(result));
  }
  return report;
}

}  // namespace sonetlab::attacks
