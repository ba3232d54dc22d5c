#include <benchmark/benchmark.h>

#include "sonetlab/attacks.hpp"
#include "sonetlab/blocks.hpp"
#include "sonetlab/ops.hpp"
#include "sonetlab/rng.hpp"
#include "sonetlab/solvers.hpp"

using namespace sonetlab;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
  return t;
}

blocks::Model desk_soblock(int channels) {
  blocks::NetworkSpec spec;
  spec.architecture = blocks::Architecture::soblock;
  spec.channels = channels;
  spec.num_classes = 10;
  spec.input_shape = {1, 14, 14};
  spec.solver.method = solvers::Method::dopri5;
  spec.solver.tol = 0.1;
  Rng rng(1);
  return blocks::assemble_network(spec, rng);
}

}  // namespace

static void BM_Conv2dForward(benchmark::State& state) {
  Rng rng(2);
  const int c = static_cast<int>(state.range(0));
  const Tensor k = random_tensor({c, c, 3, 3}, rng);
  const Tensor x = random_tensor({c, 14, 14}, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv2d(k, x, 1, 1));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Conv2dForward)->Arg(4)->Arg(8)->Arg(16);

static void BM_Dopri5SkewBlock(benchmark::State& state) {
  Rng rng(3);
  blocks::SkewOdeBlockParams p;
  p.kernel = random_tensor({8, 8, 3, 3}, rng);
  p.conv = true;
  p.activation = ActivationKind::elu;
  const Tensor x = random_tensor({8, 14, 14}, rng);
  solvers::SolverConfig cfg;
  cfg.method = solvers::Method::dopri5;
  cfg.tol = state.range(0) == 0 ? 0.1 : 0.001;
  for (auto _ : state) {
    benchmark::DoNotOptimize(blocks::ode_block_forward(p, x, cfg));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_Dopri5SkewBlock)->Arg(0)->Arg(1);

static void BM_ModelForwardBackward(benchmark::State& state) {
  blocks::Model model = desk_soblock(static_cast<int>(state.range(0)));
  Rng rng(4);
  Tensor x({1, 14, 14});
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0.0, 1.0);
  for (auto _ : state) {
    Tape tape;
    auto binding = model.bind(tape);
    NodeId loss = tape.cross_entropy(model.logits(tape, binding, tape.leaf(x)), 3);
    benchmark::DoNotOptimize(tape.backprop(loss, Tensor::scalar(1.0)));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ModelForwardBackward)->Arg(4)->Arg(8);

static void BM_PgdStep(benchmark::State& state) {
  blocks::Model model = desk_soblock(8);
  Rng rng(5);
  Tensor x({1, 14, 14});
  for (std::int64_t i = 0; i < x.size(); ++i) x[i] = rng.uniform(0.0, 1.0);
  attacks::AttackConfig cfg = attacks::AttackConfig::defaults(attacks::AttackKind::pgd_linf);
  cfg.iterations = 1;
  cfg.epsilon = 0.3;
  cfg.eta1 = 0.03;
  for (auto _ : state) {
    benchmark::DoNotOptimize(attacks::pgd_linf(model, x, 3, cfg));
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_PgdStep);

BENCHMARK_MAIN();
