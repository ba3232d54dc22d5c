#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sonetlab/blocks.hpp"
#include "sonetlab/data.hpp"
#include "sonetlab/rng.hpp"

namespace sonetlab::training {

struct TrainConfig {
  int epochs = 350;
  int batch_size = 100;
  double lr = 0.01;
  double momentum = 0.9;
  std::vector<int> lr_milestones = {150, 300};  // epoch indices, decay 0.1 at each
  double lr_decay = 0.1;
  // TRADES: beta = 1/lambda; 0 selects plain natural training.
  double trades_beta = 0.0;
  int trades_steps = 10;
  double trades_eta = 0.007;
  double trades_epsilon = 0.031;
  std::uint64_t seed = 0;
  bool shuffle = true;
};

struct EpochRow {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochRow> log;
  bool diverged = false;
  std::string message;
};

// v <- momentum * v + g; p <- p - lr * v. No weight decay.
void sgd_momentum_step(std::vector<blocks::Parameter>& params, const std::vector<Tensor>& grads,
                       double lr, std::vector<Tensor>& velocity, double momentum = 0.9);

// Learning rate after `epoch` epochs: lr * decay^(#milestones passed).
double scheduled_lr(const TrainConfig& cfg, int epoch);

// Minimizes mean cross-entropy with SGD momentum and the milestone schedule.
// On a non-finite loss or gradient the epoch aborts, the last finite
// parameter state is restored, and the result carries the diagnostic.
TrainResult natural_train(blocks::Model& model, const data::Dataset& dataset,
                          const TrainConfig& cfg);

// Inner maximization of the consistency term: ascends
// KL(softmax(f(x)) || softmax(f(x'))) over the eps box with sign steps,
// starting from x plus a small projected jitter (the gradient vanishes
// identically at x' = x).
Tensor trades_inner_max(const blocks::Model& model, const Tensor& x, const Tensor& logits_nat,
                        const TrainConfig& cfg, Rng& rng);

// Minimizes CE(f(x'), y) + beta * KL(f(x) || f(x')). beta = 0 or eps = 0
// skips the inner maximization and reduces to natural training exactly.
TrainResult trades_train(blocks::Model& model, const data::Dataset& dataset,
                         const TrainConfig& cfg);

// Training log serialization: "epoch,lr,loss,acc" rows.
std::string train_log_csv(const TrainResult& result);

}  // namespace sonetlab::training
