#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sonetlab/blocks.hpp"
#include "sonetlab/data.hpp"
#include "sonetlab/rng.hpp"
#include "sonetlab/tensor.hpp"

namespace sonetlab::attacks {

enum class AttackKind { pgd_linf, pgd_l2, cw_linf, spsa };

std::string to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& name);

struct AttackConfig {
  AttackKind kind = AttackKind::pgd_linf;
  double epsilon = 0.031;
  double eta1 = 0.003;
  int iterations = 20;
  int spsa_samples = 32;
  double spsa_delta = 0.01;

  // Reference hyperparameters: pgd_linf eps 0.031 / step 0.003 / 20 iters,
  // pgd_l2 eps 0.5 / step 0.1 / 20 iters, cw_linf eps 0.031 / 100 iters,
  // spsa eps 0.031 / 20 iters / 32 samples.
  static AttackConfig defaults(AttackKind kind);

  std::string label() const;  // e.g. "pgd_linf^20"
};

// Bookkeeping shared by the attack loops: coordinates of non-finite input
// gradients are zeroed rather than propagated (the observable fingerprint of
// masked gradients) and both events are counted.
struct AttackStats {
  std::int64_t nonfinite_coordinates = 0;
  std::int64_t diverged_forwards = 0;
  void merge(const AttackStats& o) {
    nonfinite_coordinates += o.nonfinite_coordinates;
    diverged_forwards += o.diverged_forwards;
  }
};

// Two-point random-direction gradient estimator:
//   mean over samples of (f(x + delta v) - f(x - delta v)) / (2 delta) * v,
// v with independent +-1 coordinates. Unbiased up to O(delta^2) for smooth f.
using Objective = std::function<double(const Tensor&)>;
Tensor spsa_gradient_estimate(const Objective& f, const Tensor& x, double delta, int samples,
                              Rng& rng);

Tensor pgd_linf(const blocks::Model& model, const Tensor& x, int label, const AttackConfig& cfg,
                AttackStats* stats = nullptr);
Tensor pgd_l2(const blocks::Model& model, const Tensor& x, int label, const AttackConfig& cfg,
              AttackStats* stats = nullptr);
Tensor cw_linf(const blocks::Model& model, const Tensor& x, int label, const AttackConfig& cfg,
               AttackStats* stats = nullptr);
Tensor spsa(const blocks::Model& model, const Tensor& x, int label, const AttackConfig& cfg,
            Rng& rng, AttackStats* stats = nullptr);

// Dispatch by cfg.kind; spsa derives its sampling stream from `rng`.
Tensor run_attack(const blocks::Model& model, const Tensor& x, int label,
                  const AttackConfig& cfg, Rng& rng, AttackStats* stats = nullptr);

// Gradient of the cross-entropy loss w.r.t. the input, with non-finite
// coordinates zeroed and counted (exposed for tests).
Tensor input_gradient_ce(const blocks::Model& model, const Tensor& x, int label,
                         AttackStats* stats = nullptr);
Tensor input_gradient_margin(const blocks::Model& model, const Tensor& x, int label,
                             AttackStats* stats = nullptr);

struct PerAttackResult {
  AttackConfig cfg;
  int correct = 0;
  int total = 0;
  AttackStats stats;
  double robust_accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

struct RobustReport {
  std::string model_name;
  int channels = 0;
  std::string solver_label;
  double natural_accuracy = 0.0;
  int sample_count = 0;
  std::uint64_t seed = 0;
  std::vector<PerAttackResult> attacks;

  std::string to_json() const;
  // CSV rows: model,channels,attack,epsilon,steps,A_nat,A_rob,seed
  static std::string csv_header();
  std::string to_csv_rows() const;
};

// Clean accuracy plus per-attack robust accuracy over the dataset. Attacks on
// distinct examples run in parallel; all randomness flows from `seed`.
RobustReport robust_eval(const blocks::Model& model, const data::Dataset& dataset,
                         std::span<const AttackConfig> cfgs, std::uint64_t seed);

}  // namespace sonetlab::attacks
