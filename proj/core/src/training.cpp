#include "sonetlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sonetlab/errors.hpp"
#include "sonetlab/ops.hpp"
#include "sonetlab/parallel.hpp"

namespace sonetlab::training {

using blocks::Model;

void sgd_momentum_step(std::vector<blocks::Parameter>& params, const std::vector<Tensor>& grads,
                       double lr, std::vector<Tensor>& velocity, double momentum) {
  if (params.size() != grads.size()) throw ContractViolation("sgd: gradient count mismatch");
  if (velocity.size() != params.size()) {
    velocity.clear();
    for (const auto& p : params) velocity.push_back(Tensor(p.value.shape()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].value;
    const Tensor& g = grads[i];
    Tensor& v = velocity[i];
    require_same_shape(p, g, "sgd");
    if (!all_finite(g)) {
      throw ContractViolation("sgd: non-finite gradient for " + params[i].name);
    }
    for (std::int64_t k = 0; k < p.size(); ++k) {
      v[k] = momentum * v[k] + g[k];
      p[k] -= lr * v[k];
    }
  }
}

double scheduled_lr(const TrainConfig& cfg, int epoch) {
  int passed = 0;
  for (int m : cfg.lr_milestones) {
    if (epoch >= m) ++passed;
  }
  return cfg.lr * std::pow(cfg.lr_decay, passed);
}

namespace {

struct ExampleResult {
  std::vector<Tensor> grads;  // aligned with model.params
  double loss = 0.0;
  bool correct = false;
  blocks::BnStats bn_stats;
};

// One taped example: forward, loss, backward. TRADES adds the inner
// maximization and the consistency term when beta > 0 and eps > 0.
ExampleResult example_pass(const Model& model, const Tensor& x, int label,
                           const TrainConfig& cfg, Rng rng) {
  const bool trades = cfg.trades_beta > 0.0 && cfg.trades_epsilon > 0.0;
  ExampleResult out;
  out.bn_stats = model.make_bn_stats();
  blocks::ForwardOptions opts;
  opts.bn_stats = &out.bn_stats;

  Tape tape;
  Model::Binding binding = model.bind(tape);
  NodeId loss_node = kNoNode;
  NodeId logits_node = kNoNode;
  if (!trades) {
    NodeId xin = tape.leaf(x);
    logits_node = model.logits(tape, binding, xin, opts);
    loss_node = tape.cross_entropy(logits_node, label);
  } else {
    // x' from the inner maximization of the KL term, then one joint tape for
    // CE(f(x'), y) + beta * KL(f(x) || f(x')).
    const Tensor logits_nat_value = model.logits_value(x);
    const Tensor x_adv = trades_inner_max(model, x, logits_nat_value, cfg, rng);
    NodeId xnat = tape.leaf(x);
    NodeId xadv = tape.leaf(x_adv);
    NodeId logits_nat = model.logits(tape, binding, xnat, opts);
    NodeId logits_adv = model.logits(tape, binding, xadv);
    NodeId ce = tape.cross_entropy(logits_adv, label);
    NodeId kl = tape.kl_consistency(logits_adv, logits_nat);
    const NodeId terms[] = {ce, kl};
    const double w[] = {1.0, cfg.trades_beta};
    loss_node = tape.lincomb(terms, w);
    logits_node = logits_nat;
  }

  out.loss = tape.value(loss_node).item();
  out.correct = argmax_lowest(tape.value(logits_node)) == label;
  GradientMap grads = tape.backprop(loss_node, Tensor::scalar(1.0));
  out.grads.reserve(model.params.size());
  for (NodeId id : binding.nodes) out.grads.push_back(grads.at(id));
  return out;
}

TrainResult train_loop(Model& model, const data::Dataset& dataset, const TrainConfig& cfg) {
  if (dataset.size() == 0) throw ContractViolation("train: empty dataset");
  if (cfg.batch_size < 1 || cfg.epochs < 0) throw ContractViolation("train: bad config");

  TrainResult result;
  Rng rng(cfg.seed);
  std::vector<Tensor> velocity;
  std::vector<int> order(static_cast<std::size_t>(dataset.size()));
  std::iota(order.begin(), order.end(), 0);

  // Last finite snapshot, restored if an epoch aborts on divergence.
  std::vector<blocks::Parameter> snapshot = model.params;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg, epoch);
    if (cfg.shuffle) rng.shuffle(order);
    double loss_sum = 0.0;
    std::int64_t correct = 0, seen = 0;
    bool aborted = false;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      std::vector<ExampleResult> results(count);
      // Per-example RNG streams are derived once, before the parallel region.
      std::vector<Rng> streams;
      streams.reserve(count);
      for (std::size_t e = 0; e < count; ++e) streams.push_back(rng.child(rng.next_u64()));

      parallel_for(static_cast<std::int64_t>(count), [&](std::int64_t e) {
        const int idx = order[start + static_cast<std::size_t>(e)];
        results[static_cast<std::size_t>(e)] =
            example_pass(model, dataset.example(idx), dataset.labels[static_cast<std::size_t>(idx)],
                         cfg, streams[static_cast<std::size_t>(e)]);
      });

      // Deterministic reduction in example order.
      std::vector<Tensor> grads;
      grads.reserve(model.params.size());
      for (const auto& p : model.params) grads.push_back(Tensor(p.value.shape()));
      blocks::BnStats bn_stats = model.make_bn_stats();
      double batch_loss = 0.0;
      for (const ExampleResult& r : results) {
        for (std::size_t i = 0; i < grads.size(); ++i) accumulate(grads[i], r.grads[i]);
        bn_stats.merge(r.bn_stats);
        batch_loss += r.loss;
        correct += r.correct;
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (Tensor& g : grads) {
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] *= inv;
      }
      batch_loss *= inv;
      loss_sum += batch_loss * count;
      seen += count;

      if (!std::isfinite(batch_loss)) {
        model.params = snapshot;
        result.diverged = true;
        result.message = "non-finite loss at epoch " + std::to_string(epoch);
        aborted = true;
        break;
      }
      try {
        sgd_momentum_step(model.params, grads, lr, velocity, cfg.momentum);
      } catch (const ContractViolation& e) {
        model.params = snapshot;
        result.diverged = true;
        result.message = std::string(e.what()) + " at epoch " + std::to_string(epoch);
        aborted = true;
        break;
      }
      model.update_bn_running(bn_stats);
    }
    if (aborted) break;

    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.loss = loss_sum / static_cast<double>(seen);
    row.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    result.log.push_back(row);
    snapshot = model.params;
  }
  return result;
}

}  // namespace

Tensor trades_inner_max(const Model& model, const Tensor& x, const Tensor& logits_nat,
                        const TrainConfig& cfg, Rng& rng) {
  const double eps = cfg.trades_epsilon;
  Tensor adv = x;
  // The KL gradient vanishes identically at x' = x, so ascent starts from a
  // small jitter, projected into the ball (eps = 0 collapses back to x).
  for (std::int64_t i = 0; i < adv.size(); ++i) adv[i] += 0.001 * rng.normal();
  for (std::int64_t i = 0; i < adv.size(); ++i) {
    adv[i] = std::clamp(adv[i], std::max(x[i] - eps, 0.0), std::min(x[i] + eps, 1.0));
  }
  for (int k = 0; k < cfg.trades_steps; ++k) {
    Tape tape;
    Model::Binding binding = model.bind(tape);
    NodeId xadv = tape.leaf(adv);
    NodeId nat = tape.leaf(logits_nat);
    NodeId logits_adv = model.logits(tape, binding, xadv);
    NodeId kl = tape.kl_consistency(logits_adv, nat);
    GradientMap grads = tape.backprop(kl, Tensor::scalar(1.0));
    const Tensor& g = grads.at(xadv);
    for (std::int64_t i = 0; i < adv.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      adv[i] += cfg.trades_eta * s;
      adv[i] = std::clamp(adv[i], std::max(x[i] - eps, 0.0), std::min(x[i] + eps, 1.0));
    }
  }
  // If the objective never became informative (zero-gradient models), the
  // jitter is all that remains; x itself is then the maximizer we report.
  if (kl_consistency_value(model.logits_value(adv), logits_nat) <= 0.0) return x;
  return adv;
}

TrainResult natural_train(Model& model, const data::Dataset& dataset, const TrainConfig& cfg) {
  TrainConfig natural = cfg;
  natural.trades_beta = 0.0;
  return train_loop(model, dataset, natural);
}

TrainResult trades_train(Model& model, const data::Dataset& dataset, const TrainConfig& cfg) {
  if (cfg.trades_beta < 0.0) throw ContractViolation("trades_train: beta must be >= 0");
  return train_loop(model, dataset, cfg);
}

std::string train_log_csv(const TrainResult& result) {
  std::ostringstream os;
  os << "epoch,lr,loss,acc\n";
  os.precision(8);
  for (const EpochRow& r : result.log) {
    os << r.epoch << ',' << r.lr << ',' << r.loss << ',' << r.accuracy << '\n';
  }
  return os.str();
}

}  // namespace sonetlab::training
