#include <cmath>

#include <doctest.h>

#include "sonetlab/errors.hpp"
#include "sonetlab/fd.hpp"
#include "sonetlab/ops.hpp"
#include "sonetlab/rng.hpp"
#include "sonetlab/tape.hpp"

using namespace sonetlab;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

// ============================================================================
// linear_apply / linear_apply_negT
// ============================================================================

TEST_CASE("linear: identity and zero kernels") {
  Tape tape;
  NodeId w = tape.leaf(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  NodeId x = tape.leaf(Tensor::of({3, 4}));
  CHECK(tape.value(tape.linear(w, x))[0] == 3.0);
  CHECK(tape.value(tape.linear(w, x))[1] == 4.0);

  NodeId zero = tape.leaf(Tensor({2, 2}));
  const Tensor& out = tape.value(tape.linear(zero, x));
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);
}

TEST_CASE("linear: hand arithmetic") {
  Tape tape;
  NodeId w = tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  NodeId x = tape.leaf(Tensor::of({1, 1}));
  const Tensor& out = tape.value(tape.linear(w, x));
  CHECK(out[0] == doctest::Approx(3.0));
  CHECK(out[1] == doctest::Approx(7.0));
}

TEST_CASE("linear: shape mismatch is a contract violation") {
  Tape tape;
  NodeId w = tape.leaf(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  NodeId x = tape.leaf(Tensor::of({1, 1}));
  CHECK_THROWS_AS(tape.linear(w, x), ContractViolation);
}

TEST_CASE("linear_neg_transpose: negated identity and hand case") {
  Tape tape;
  NodeId w = tape.leaf(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  NodeId z = tape.leaf(Tensor::of({1, 0}));
  const Tensor& a = tape.value(tape.linear_neg_transpose(w, z));
  CHECK(a[0] == -1.0);
  CHECK(a[1] == 0.0);

  NodeId w2 = tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  NodeId z2 = tape.leaf(Tensor::of({1, 1}));
  const Tensor& b = tape.value(tape.linear_neg_transpose(w2, z2));
  CHECK(b[0] == doctest::Approx(-4.0));
  CHECK(b[1] == doctest::Approx(-6.0));
}

TEST_CASE("adjoint identity: <Wx, z> + <x, negT(W, z)> = 0") {
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + rng.uniform_int(6), n = 1 + rng.uniform_int(6);
    Tensor w = random_tensor({m, n}, rng);
    Tensor x = random_tensor({n}, rng);
    Tensor z = random_tensor({m}, rng);
    Tape tape;
    NodeId wn = tape.leaf(w), xn = tape.leaf(x), zn = tape.leaf(z);
    const double lhs = dot(tape.value(tape.linear(wn, xn)), z);
    const double rhs = dot(x, tape.value(tape.linear_neg_transpose(wn, zn)));
    CHECK(std::abs(lhs + rhs) < 1e-10);
  }
}

// ============================================================================
// conv2d / conv2d_negT
// ============================================================================

TEST_CASE("conv2d: 1x1 identity kernel reproduces the image") {
  Rng rng(7);
  Tensor x = random_tensor({1, 4, 4}, rng);
  Tape tape;
  NodeId k = tape.leaf(Tensor({1, 1, 1, 1}, {1.0}));
  const Tensor& out = tape.value(tape.conv2d(k, tape.leaf(x), 1, 0));
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(out[i] == x[i]);
}

TEST_CASE("conv2d: zero kernel maps to zero") {
  Rng rng(8);
  Tensor x = random_tensor({2, 3, 3}, rng);
  Tape tape;
  const Tensor& out = tape.value(tape.conv2d(tape.leaf(Tensor({2, 2, 3, 3})), tape.leaf(x), 1, 1));
  for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
}

TEST_CASE("conv2d: averaging kernel on a constant image") {
  // 3x3 kernel of 1/9 on a constant 3x3 image: the padded borders see fewer
  // pixels, so the center keeps value v and each corner sees 4 of 9 taps.
  const double v = 2.5;
  Tape tape;
  NodeId k = tape.leaf(Tensor::full({1, 1, 3, 3}, 1.0 / 9.0));
  NodeId x = tape.leaf(Tensor::full({1, 3, 3}, v));
  const Tensor& out = tape.value(tape.conv2d(k, x, 1, 1));
  CHECK(out[4] == doctest::Approx(v));            // center
  CHECK(out[0] == doctest::Approx(4.0 * v / 9));  // corner
}

TEST_CASE("conv2d: even kernels are rejected") {
  Tape tape;
  CHECK_THROWS_AS(tape.conv2d(tape.leaf(Tensor({1, 1, 2, 2})), tape.leaf(Tensor({1, 4, 4})), 1, 0),
                  ContractViolation);
}

TEST_CASE("conv2d_negT: identity kernel negates, stride != 1 rejected") {
  Rng rng(9);
  Tensor z = random_tensor({1, 4, 4}, rng);
  Tape tape;
  NodeId k = tape.leaf(Tensor({1, 1, 1, 1}, {1.0}));
  NodeId zn = tape.leaf(z);
  const Tensor& out = tape.value(tape.conv2d_neg_transpose(k, zn, 1, 0));
  for (std::int64_t i = 0; i < z.size(); ++i) CHECK(out[i] == -z[i]);
  CHECK_THROWS_AS(tape.conv2d_neg_transpose(k, zn, 2, 0), ContractViolation);
}

TEST_CASE("conv adjoint identity within 1e-10 on random instances") {
  Rng rng(42);
  for (int trial = 0; trial < 25; ++trial) {
    const int ci = 1 + rng.uniform_int(3), co = 1 + rng.uniform_int(3);
    const int hw = 3 + rng.uniform_int(4);
    Tensor k = random_tensor({co, ci, 3, 3}, rng);
    Tensor x = random_tensor({ci, hw, hw}, rng);
    Tensor z = random_tensor({co, hw, hw}, rng);
    Tape tape;
    NodeId kn = tape.leaf(k);
    const double lhs = dot(tape.value(tape.conv2d(kn, tape.leaf(x), 1, 1)), z);
    const double rhs = dot(x, tape.value(tape.conv2d_neg_transpose(kn, tape.leaf(z), 1, 1)));
    CHECK(std::abs(lhs + rhs) < 1e-10);
  }
}

TEST_CASE("conv2d input gradient equals the negated transpose of the upstream") {
  Rng rng(43);
  Tensor k = random_tensor({2, 2, 3, 3}, rng);
  Tensor x = random_tensor({2, 5, 5}, rng);
  Tensor seed = random_tensor({2, 5, 5}, rng);

  Tape tape;
  NodeId kn = tape.leaf(k), xn = tape.leaf(x);
  NodeId y = tape.conv2d(kn, xn, 1, 1);
  GradientMap grads = tape.backprop(y, seed);

  Tape tape2;
  const Tensor& via_negt =
      tape2.value(tape2.conv2d_neg_transpose(tape2.leaf(k), tape2.leaf(seed), 1, 1));
  const Tensor& gx = grads.at(xn);
  for (std::int64_t i = 0; i < gx.size(); ++i) {
    CHECK(gx[i] == doctest::Approx(-via_negt[i]).epsilon(1e-12));
  }

  // cross-check against the finite-difference oracle on <conv(K, x), seed>
  auto f = [&](const Tensor& probe) {
    Tape t;
    return dot(t.value(t.conv2d(t.leaf(k), t.leaf(probe), 1, 1)), seed);
  };
  CHECK(max_relative_error(gx, fd_gradient(f, x)) < 1e-4);
}

// ============================================================================
// activations
// ============================================================================

TEST_CASE("activation closed forms") {
  CHECK(activate(ActivationKind::tanh, 0.0) == 0.0);
  CHECK(activate_derivative(ActivationKind::tanh, 0.0) == 1.0);
  CHECK(activate(ActivationKind::softplus, 0.0) == doctest::Approx(std::log(2.0)));
  CHECK(activate_derivative(ActivationKind::elu, -5.0) == doctest::Approx(std::exp(-5.0)));
  CHECK(activate_derivative(ActivationKind::elu, -5.0) > 0.0);
  CHECK(strictly_increasing(ActivationKind::tanh));
  CHECK(strictly_increasing(ActivationKind::elu));
  CHECK(strictly_increasing(ActivationKind::softplus));
  CHECK_FALSE(strictly_increasing(ActivationKind::relu));
}

// ============================================================================
// backprop and fd_gradient
// ============================================================================

TEST_CASE("backprop: identity map has unit gradient") {
  Tape tape;
  NodeId x = tape.leaf(Tensor::of({2.0}));
  NodeId y = tape.scale(x, 1.0);
  GradientMap g = tape.backprop(y, Tensor::of({1.0}));
  CHECK(g.at(x)[0] == 1.0);
}

TEST_CASE("backprop: tanh(w x) at w = 0 has zero input gradient") {
  Tape tape;
  NodeId w = tape.leaf(Tensor::matrix(1, 1, {0.0}));
  NodeId x = tape.leaf(Tensor::of({0.7}));
  NodeId y = tape.activation(ActivationKind::tanh, tape.linear(w, x));
  GradientMap g = tape.backprop(y, Tensor::of({1.0}));
  CHECK(g.at(x)[0] == 0.0);
  CHECK(g.at(w)[0] == doctest::Approx(0.7));  // sigma'(0) * x
}

TEST_CASE("fd_gradient closed forms") {
  auto sum_sq = [](const Tensor& t) { return dot(t, t); };
  Tensor x = Tensor::of({1.0, 2.0});
  Tensor g = fd_gradient(sum_sq, x);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(4.0).epsilon(1e-8));

  auto constant = [](const Tensor&) { return 3.0; };
  Tensor gc = fd_gradient(constant, x);
  CHECK(gc[0] == 0.0);
  CHECK(gc[1] == 0.0);
}

TEST_CASE("backprop matches finite differences on a random two-block composite") {
  // two stacked skew-style pairs with shared kernels, ending in a scalar loss
  Rng rng(4242);
  const int n = 4;
  Tensor w1v = random_tensor({n, n}, rng), w2v = random_tensor({n, n}, rng);
  Tensor xv = random_tensor({n}, rng);

  auto loss_fn = [&](const Tensor& w1t, const Tensor& w2t, const Tensor& xt, int wrt) {
    return [&, wrt](const Tensor& probe) {
      Tensor a = wrt == 0 ? probe : w1t;
      Tensor b = wrt == 1 ? probe : w2t;
      Tensor c = wrt == 2 ? probe : xt;
      Tape t;
      NodeId w1 = t.leaf(a), w2 = t.leaf(b), x = t.leaf(c);
      NodeId h1 = t.activation(ActivationKind::tanh, t.linear(w1, x));
      NodeId h2 = t.add(x, t.activation(ActivationKind::elu, t.linear_neg_transpose(w1, h1)));
      NodeId h3 = t.activation(ActivationKind::softplus, t.linear(w2, h2));
      return t.value(t.cross_entropy(h3, 1)).item();
    };
  };

  Tape tape;
  NodeId w1 = tape.leaf(w1v), w2 = tape.leaf(w2v), x = tape.leaf(xv);
  NodeId h1 = tape.activation(ActivationKind::tanh, tape.linear(w1, x));
  NodeId h2 =
      tape.add(x, tape.activation(ActivationKind::elu, tape.linear_neg_transpose(w1, h1)));
  NodeId h3 = tape.activation(ActivationKind::softplus, tape.linear(w2, h2));
  NodeId loss = tape.cross_entropy(h3, 1);
  GradientMap g = tape.backprop(loss, Tensor::scalar(1.0));

  CHECK(max_relative_error(g.at(w1), fd_gradient(loss_fn(w1v, w2v, xv, 0), w1v)) < 1e-4);
  CHECK(max_relative_error(g.at(w2), fd_gradient(loss_fn(w1v, w2v, xv, 1), w2v)) < 1e-4);
  CHECK(max_relative_error(g.at(x), fd_gradient(loss_fn(w1v, w2v, xv, 2), xv)) < 1e-4);
}

TEST_CASE("backprop exactness across op families") {
  Rng rng(99);
  // conv + pool + batchnorm-affine + channel_copy path to a scalar
  Tensor kv = random_tensor({2, 2, 3, 3}, rng);
  Tensor xv = random_tensor({1, 4, 4}, rng, 0.0, 1.0);
  Tensor gammav = random_tensor({2}, rng, 0.5, 1.5);
  Tensor betav = random_tensor({2}, rng);
  Tensor meanv = random_tensor({2}, rng, -0.2, 0.2);
  Tensor varv = random_tensor({2}, rng, 0.5, 1.5);

  auto build = [&](const Tensor& k, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   Tape& t, NodeId* kn, NodeId* xn, NodeId* gn, NodeId* bn) {
    *kn = t.leaf(k);
    *xn = t.leaf(x);
    *gn = t.leaf(gamma);
    *bn = t.leaf(beta);
    NodeId wide = t.channel_copy(*xn, 2);
    NodeId conv = t.conv2d(*kn, wide, 1, 1);
    NodeId bnorm = t.batchnorm_affine(conv, *gn, *bn, meanv, varv, 1e-5);
    NodeId act = t.activation(ActivationKind::elu, bnorm);
    NodeId pooled = t.avg_pool(act);
    return t.cross_entropy(pooled, 0);
  };

  Tape tape;
  NodeId kn, xn, gn, bn;
  NodeId loss = build(kv, xv, gammav, betav, tape, &kn, &xn, &gn, &bn);
  GradientMap g = tape.backprop(loss, Tensor::scalar(1.0));

  auto fd_wrt = [&](int which, const Tensor& at) {
    return fd_gradient(
        [&, which](const Tensor& probe) {
          Tape t;
          NodeId a, b, c, d;
          NodeId l = build(which == 0 ? probe : kv, which == 1 ? probe : xv,
                           which == 2 ? probe : gammav, which == 3 ? probe : betav, t, &a, &b, &c,
                           &d);
          return t.value(l).item();
        },
        at);
  };
  CHECK(max_relative_error(g.at(kn), fd_wrt(0, kv)) < 1e-4);
  CHECK(max_relative_error(g.at(xn), fd_wrt(1, xv)) < 1e-4);
  CHECK(max_relative_error(g.at(gn), fd_wrt(2, gammav)) < 1e-4);
  CHECK(max_relative_error(g.at(bn), fd_wrt(3, betav)) < 1e-4);
}

// ============================================================================
// losses
// ============================================================================

TEST_CASE("cross_entropy: uniform, stabilized and direct oracle values") {
  CHECK(cross_entropy_logits_value(Tensor::of({0, 0}), 0) == doctest::Approx(std::log(2.0)));
  CHECK(cross_entropy_logits_value(Tensor::of({1000, -1000}), 0) == doctest::Approx(0.0));
  // direct softmax evaluation: -log(e^3 / (e^1 + e^2 + e^3))
  const double expected = std::log(1.0 + std::exp(-1.0) + std::exp(-2.0));
  CHECK(cross_entropy_logits_value(Tensor::of({1, 2, 3}), 2) == doctest::Approx(expected));
  CHECK(expected == doctest::Approx(0.40760596).epsilon(1e-6));
  CHECK_THROWS_AS(cross_entropy_logits_value(Tensor::of({1, 2}), 5), ContractViolation);
}

TEST_CASE("cross_entropy is invariant to constant logit shifts") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = random_tensor({5}, rng, -3.0, 3.0);
    const int label = rng.uniform_int(5);
    const double base = cross_entropy_logits_value(logits, label);
    Tensor shifted = logits;
    const double c = rng.uniform(-50.0, 50.0);
    for (int i = 0; i < 5; ++i) shifted[i] += c;
    CHECK(std::abs(cross_entropy_logits_value(shifted, label) - base) < 1e-12);
  }
}

TEST_CASE("kl_consistency: zero at equality, asymmetric, closed form") {
  CHECK(kl_consistency_value(Tensor::of({1, 2}), Tensor::of({1, 2})) == doctest::Approx(0.0));

  const double ab = kl_consistency_value(Tensor::of({0, 2}), Tensor::of({2, 0}));
  const double ba = kl_consistency_value(Tensor::of({2, 0}), Tensor::of({0, 2}));
  CHECK(ab == doctest::Approx(ba).epsilon(1e-12));  // here symmetric by swap of roles
  const double asym1 = kl_consistency_value(Tensor::of({0, 1}), Tensor::of({0, 3}));
  const double asym2 = kl_consistency_value(Tensor::of({0, 3}), Tensor::of({0, 1}));
  CHECK(asym1 != doctest::Approx(asym2));

  // KL(uniform || (0.25, 0.75)) = 0.5 ln(0.5/0.25) + 0.5 ln(0.5/0.75)
  const double expected = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
  CHECK(kl_consistency_value(Tensor::of({0.0, std::log(3.0)}), Tensor::of({0, 0})) ==
        doctest::Approx(expected));
  CHECK(expected == doctest::Approx(0.1438).epsilon(1e-3));
}

TEST_CASE("kl_consistency gradients match finite differences") {
  Rng rng(78);
  Tensor adv = random_tensor({4}, rng, -2.0, 2.0);
  Tensor nat = random_tensor({4}, rng, -2.0, 2.0);
  Tape tape;
  NodeId a = tape.leaf(adv), n = tape.leaf(nat);
  GradientMap g = tape.backprop(tape.kl_consistency(a, n), Tensor::scalar(1.0));
  CHECK(max_relative_error(g.at(a), fd_gradient([&](const Tensor& p) {
          return kl_consistency_value(p, nat);
        }, adv)) < 1e-4);
  CHECK(max_relative_error(g.at(n), fd_gradient([&](const Tensor& p) {
          return kl_consistency_value(adv, p);
        }, nat)) < 1e-4);
}

TEST_CASE("cw_margin: definition, ties and scaling") {
  CHECK(cw_margin_value(Tensor::of({2, 5}), 0) == doctest::Approx(-3.0));
  CHECK(cw_margin_value(Tensor::of({5, 5}), 0) == doctest::Approx(0.0));
  Tensor onehot({4});
  onehot[2] = 10.0;
  CHECK(cw_margin_value(onehot, 2) == doctest::Approx(10.0));
}

// ============================================================================
// tape invariants
// ============================================================================

TEST_CASE("tape replay is bit-identical") {
  Rng rng(31);
  Tape tape;
  NodeId w = tape.leaf(random_tensor({3, 3}, rng));
  NodeId x = tape.leaf(random_tensor({3}, rng));
  NodeId h = tape.activation(ActivationKind::tanh, tape.linear(w, x));
  NodeId h2 = tape.add(x, tape.linear_neg_transpose(w, h));
  (void)tape.cross_entropy(h2, 0);
  CHECK_NOTHROW(tape.replay_check());
}

TEST_CASE("identical graphs rebuilt from scratch give bit-identical outputs") {
  Rng rng(32);
  Tensor w = random_tensor({4, 4}, rng);
  Tensor x = random_tensor({4}, rng);
  auto run = [&]() {
    Tape t;
    NodeId wn = t.leaf(w), xn = t.leaf(x);
    NodeId y = t.activation(ActivationKind::softplus, t.linear(wn, xn));
    return t.value(t.sum(y)).item();
  };
  CHECK(run() == run());
}

TEST_CASE("backprop rejects seeds of the wrong shape") {
  Tape tape;
  NodeId x = tape.leaf(Tensor::of({1, 2}));
  NodeId y = tape.sum(x);
  CHECK_THROWS_AS(tape.backprop(y, Tensor::of({1, 2})), ContractViolation);
}

TEST_CASE("gradient flows into a shared leaf from both branches") {
  // f = <W x, W x'> uses W twice; gradient must be the sum of both paths.
  Rng rng(33);
  Tensor wv = random_tensor({3, 3}, rng);
  Tensor xv = random_tensor({3}, rng);
  Tensor yv = random_tensor({3}, rng);
  Tape tape;
  NodeId w = tape.leaf(wv);
  NodeId loss = tape.dot(tape.linear(w, tape.leaf(xv)), tape.linear(w, tape.leaf(yv)));
  GradientMap g = tape.backprop(loss, Tensor::scalar(1.0));
  auto f = [&](const Tensor& probe) {
    Tape t;
    NodeId wn = t.leaf(probe);
    return t.value(t.dot(t.linear(wn, t.leaf(xv)), t.linear(wn, t.leaf(yv)))).item();
  };
  CHECK(max_relative_error(g.at(w), fd_gradient(f, wv)) < 1e-4);
}
