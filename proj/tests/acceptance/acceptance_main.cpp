// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Criteria 8-10 train desk-scale models and dominate the runtime.
//
// The digit corpus for criteria 8/9 prefers real MNIST IDX files when they
// are present (SONETLAB_MNIST_DIR or ./data/mnist), 2x mean-pooled to 14x14;
// otherwise the bundled synthetic glyph corpus runs the identical protocol.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sonetlab/attacks.hpp"
#include "sonetlab/blocks.hpp"
#include "sonetlab/data.hpp"
#include "sonetlab/fd.hpp"
#include "sonetlab/ops.hpp"
#include "sonetlab/rng.hpp"
#include "sonetlab/solvers.hpp"
#include "sonetlab/stability.hpp"
#include "sonetlab/training.hpp"

using namespace sonetlab;
namespace fs = std::filesystem;

namespace {

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << "    failed: " << what << "\n";
    }
  }
  void note(const std::string& what) { detail << "    " << what << "\n"; }
};

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.normal();
  return t;
}

// ---------------------------------------------------------------------------
// criterion 1: Theorem-1 certificate on random skew blocks
// ---------------------------------------------------------------------------
void criterion1(Check& c) {
  Rng rng(101);
  for (int trial = 0; trial < 100; ++trial) {
    const int m = 2 + rng.uniform_int(15);  // dims <= 16
    const int n = 2 + rng.uniform_int(15);
    blocks::SkewOdeBlockParams p;
    p.kernel = random_tensor({m, n}, rng);
    p.gamma = 0.1;
    p.activation = ActivationKind::tanh;
    const Tensor x = random_tensor({n}, rng, 0.5);
    const Tensor z = random_tensor({m}, rng, 0.5);

    const Tensor d = stability::jacobian_diagonal(p, x, z);
    const double bound = stability::spectral_abscissa_bound(Tensor(), d, p.gamma);
    c.require(bound < 0.0, "abscissa bound must be negative (trial " + std::to_string(trial) + ")");

    // symmetric part of D^{1/2}(A - gamma I)D^{1/2}
    const stability::BlockMatrix a = stability::build_block_matrix(p.kernel);
    const int dim = a.a.dim(0);
    Tensor sym({dim, dim});
    for (int r = 0; r < dim; ++r) {
      for (int cc = 0; cc < dim; ++cc) {
        const double v = a.a[r * dim + cc] - (r == cc ? p.gamma : 0.0);
        const double w = a.a[cc * dim + r] - (r == cc ? p.gamma : 0.0);
        sym[r * dim + cc] =
            0.5 * (std::sqrt(d[r]) * v * std::sqrt(d[cc]) + std::sqrt(d[cc]) * w * std::sqrt(d[r]));
      }
    }
    const auto eig = stability::jacobi_eigenvalues(sym);
    for (double lambda : eig) {
      if (!(lambda <= bound + 1e-9)) {
        c.require(false, "eigenvalue above bound at trial " + std::to_string(trial));
        break;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// criterion 2: orthogonal state transition
// ---------------------------------------------------------------------------
void criterion2(Check& c) {
  Rng rng(202);
  double worst = 0.0;
  for (int n = 2; n <= 8; ++n) {
    const Tensor w = random_tensor({n, n}, rng);
    worst = std::max(worst, stability::transition_orthogonality_check(w, 1.0, 1e-9));
  }
  c.note("max ||Phi^T Phi - I||_max = " + std::to_string(worst));
  c.require(worst < 1e-6, "orthogonality deviation must stay below 1e-6");
}

// ---------------------------------------------------------------------------
// criterion 3: appendix norm bounds for the linear block
// ---------------------------------------------------------------------------
void criterion3(Check& c) {
  Rng rng(303);
  const double tol = 1e-9;
  for (double horizon : {1.0, 5.0, 10.0}) {
    for (int trial = 0; trial < 5; ++trial) {
      const int n = 2 + rng.uniform_int(5);
      blocks::SkewOdeBlockParams p;
      p.kernel = random_tensor({n, n}, rng, 0.8);
      p.activation = ActivationKind::identity;
      const auto layout = blocks::joint_layout(p.kernel, false, {n});
      const auto field = blocks::make_skew_value_field(p, layout);
      Tensor x0 = random_tensor({n}, rng, 0.7);

      Tensor mirrored({2 * n});
      for (int i = 0; i < n; ++i) mirrored[i] = mirrored[n + i] = x0[i];
      auto out = solvers::dopri5_integrate(field, mirrored, 0.0, horizon, tol);
      double xt = 0.0;
      for (int i = 0; i < n; ++i) xt += out.y1[i] * out.y1[i];
      c.require(std::sqrt(xt) <= std::sqrt(2.0) * norm2(x0) + 1e-6,
                "z(0)=x(0) bound at t=" + std::to_string(horizon));

      Tensor rest({2 * n});
      for (int i = 0; i < n; ++i) rest[i] = x0[i];
      out = solvers::dopri5_integrate(field, rest, 0.0, horizon, tol);
      xt = 0.0;
      for (int i = 0; i < n; ++i) xt += out.y1[i] * out.y1[i];
      c.require(std::sqrt(xt) <= norm2(x0) + 1e-6,
                "z(0)=0 bound at t=" + std::to_string(horizon));
    }
  }
}

// ---------------------------------------------------------------------------
// criterion 4: autodiff exactness across block types and losses
// ---------------------------------------------------------------------------
void criterion4(Check& c) {
  Rng rng(404);
  double worst = 0.0;
  auto track = [&](double err, const char* what, int trial) {
    worst = std::max(worst, err);
    if (!(err < 1e-4)) {
      c.require(false, std::string(what) + " gradient mismatch " + std::to_string(err) +
                           " at trial " + std::to_string(trial));
    }
  };

  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + rng.uniform_int(3);

    // skew ODE block under each solver family
    {
      blocks::SkewOdeBlockParams meta;
      meta.gamma = 0.05;
      meta.activation = ActivationKind::tanh;
      const Tensor wv = random_tensor({n, n}, rng, 0.6);
      const Tensor xv = random_tensor({n}, rng, 0.5);
      solvers::SolverConfig cfgs[3];
      cfgs[0].method = solvers::Method::euler;
      cfgs[0].h = 0.25;
      cfgs[1].method = solvers::Method::rk4;
      cfgs[1].h = 0.5;
      cfgs[2].method = solvers::Method::dopri5;
      cfgs[2].tol = 1e-6;
      for (const auto& cfg : cfgs) {
        Tape tape;
        NodeId w = tape.leaf(wv);
        NodeId x = tape.leaf(xv);
        NodeId out = blocks::ode_block_forward(tape, meta, w, x, cfg);
        GradientMap g = tape.backprop(tape.cross_entropy(out, 0), Tensor::scalar(1.0));
        auto loss = [&](const Tensor& kernel, const Tensor& input) {
          blocks::SkewOdeBlockParams p = meta;
          p.kernel = kernel;
          return cross_entropy_logits_value(blocks::ode_block_forward(p, input, cfg), 0);
        };
        track(max_relative_error(
                  g.at(w), fd_gradient([&](const Tensor& p) { return loss(p, xv); }, wv)),
              "skew block kernel", trial);
        track(max_relative_error(
                  g.at(x), fd_gradient([&](const Tensor& p) { return loss(wv, p); }, xv)),
              "skew block input", trial);
      }
    }

    // residual pair (Eq-1 form)
    {
      const Tensor w1v = random_tensor({n, n}, rng, 0.7);
      const Tensor w2v = random_tensor({n, n}, rng, 0.7);
      const Tensor xv = random_tensor({n}, rng, 0.5);
      Tape tape;
      NodeId w1 = tape.leaf(w1v), w2 = tape.leaf(w2v), x = tape.leaf(xv);
      const auto pair = blocks::resnet_block_forward(tape, w1, w2, x, ActivationKind::tanh);
      GradientMap g = tape.backprop(tape.cross_entropy(pair.x1, 1), Tensor::scalar(1.0));
      auto loss = [&](const Tensor& a, const Tensor& b, const Tensor& xx) {
        Tape t;
        const auto pr = blocks::resnet_block_forward(t, t.leaf(a), t.leaf(b), t.leaf(xx),
                                                     ActivationKind::tanh);
        return t.value(t.cross_entropy(pr.x1, 1)).item();
      };
      track(max_relative_error(g.at(w1), fd_gradient([&](const Tensor& p) {
              return loss(p, w2v, xv);
            }, w1v)),
            "resnet w1", trial);
      track(max_relative_error(g.at(w2), fd_gradient([&](const Tensor& p) {
              return loss(w1v, p, xv);
            }, w2v)),
            "resnet w2", trial);
      track(max_relative_error(g.at(x), fd_gradient([&](const Tensor& p) {
              return loss(w1v, w2v, p);
            }, xv)),
            "resnet input", trial);
    }

    // plain neural-ODE block (Eq-2 form)
    {
      const Tensor w1v = random_tensor({n, n}, rng, 0.6);
      const Tensor w2v = random_tensor({n, n}, rng, 0.6);
      const Tensor xv = random_tensor({n}, rng, 0.5);
      solvers::SolverConfig cfg;
      cfg.method = solvers::Method::rk4;
      cfg.h = 0.5;
      Tape tape;
      NodeId w1 = tape.leaf(w1v), w2 = tape.leaf(w2v), x = tape.leaf(xv);
      NodeId out =
          blocks::odenet_block_forward(tape, w1, w2, x, ActivationKind::tanh, false, 0, cfg);
      GradientMap g = tape.backprop(tape.sum(out), Tensor::scalar(1.0));
      auto loss = [&](const Tensor& a, const Tensor& b, const Tensor& xx) {
        Tape t;
        NodeId o = blocks::odenet_block_forward(t, t.leaf(a), t.leaf(b), t.leaf(xx),
                                                ActivationKind::tanh, false, 0, cfg);
        return t.value(t.sum(o)).item();
      };
      track(max_relative_error(g.at(w1), fd_gradient([&](const Tensor& p) {
              return loss(p, w2v, xv);
            }, w1v)),
            "odenet w1", trial);
      track(max_relative_error(g.at(w2), fd_gradient([&](const Tensor& p) {
              return loss(w1v, p, xv);
            }, w2v)),
            "odenet w2", trial);
      track(max_relative_error(g.at(x), fd_gradient([&](const Tensor& p) {
              return loss(w1v, w2v, p);
            }, xv)),
            "odenet input", trial);
    }

    // losses on raw logits
    {
      const Tensor la = random_tensor({4}, rng, 1.5);
      const Tensor lb = random_tensor({4}, rng, 1.5);
      Tape tape;
      NodeId a = tape.leaf(la), b = tape.leaf(lb);
      GradientMap gce = tape.backprop(tape.cross_entropy(a, 2), Tensor::scalar(1.0));
      track(max_relative_error(gce.at(a), fd_gradient([&](const Tensor& p) {
              return cross_entropy_logits_value(p, 2);
            }, la)),
            "cross entropy", trial);

      Tape t2;
      NodeId a2 = t2.leaf(la), b2 = t2.leaf(lb);
      GradientMap gkl = t2.backprop(t2.kl_consistency(a2, b2), Tensor::scalar(1.0));
      track(max_relative_error(gkl.at(a2), fd_gradient([&](const Tensor& p) {
              return kl_consistency_value(p, lb);
            }, la)),
            "kl adv side", trial);
      track(max_relative_error(gkl.at(b2), fd_gradient([&](const Tensor& p) {
              return kl_consistency_value(la, p);
            }, lb)),
            "kl nat side", trial);

      Tape t3;
      NodeId a3 = t3.leaf(la);
      GradientMap gm = t3.backprop(t3.cw_margin(a3, 1), Tensor::scalar(1.0));
      track(max_relative_error(gm.at(a3), fd_gradient([&](const Tensor& p) {
              return cw_margin_value(p, 1);
            }, la)),
            "cw margin", trial);
    }
  }

  // full conv model with batchnorm, fixed-step solver
  {
    blocks::NetworkSpec spec;
    spec.architecture = blocks::Architecture::soblock;
    spec.channels = 2;
    spec.num_classes = 3;
    spec.input_shape = {1, 8, 8};
    spec.solver.method = solvers::Method::rk4;
    spec.solver.h = 0.5;
    Rng mrng(17);
    blocks::Model m = blocks::assemble_network(spec, mrng);
    const Tensor xv = random_tensor({1, 8, 8}, rng, 0.3);

    Tape tape;
    auto binding = m.bind(tape);
    NodeId x = tape.leaf(xv);
    NodeId loss = tape.cross_entropy(m.logits(tape, binding, x), 1);
    GradientMap g = tape.backprop(loss, Tensor::scalar(1.0));
    const Tensor fd = fd_gradient(
        [&](const Tensor& p) { return cross_entropy_logits_value(m.logits_value(p), 1); }, xv);
    const double err = max_relative_error(g.at(x), fd);
    worst = std::max(worst, err);
    c.require(err < 1e-4, "soblock end-to-end input gradient, err = " + std::to_string(err));
  }

  c.note("max relative error = " + std::to_string(worst));
}

// ---------------------------------------------------------------------------
// criterion 5: solver orders
// ---------------------------------------------------------------------------
void criterion5(Check& c) {
  const solvers::ValueField exp_field = [](double, const Tensor& y) { return y; };
  const solvers::ValueField rot = [](double, const Tensor& y) {
    return Tensor::of({-y[1], y[0]});
  };

  std::vector<double> hs = {0.25, 0.125, 0.0625, 0.03125};
  std::vector<double> le, lr, lh;
  for (double h : hs) {
    le.push_back(std::log(std::abs(
        solvers::euler_integrate(exp_field, Tensor::of({1.0}), 0.0, 1.0, h).y1[0] - std::exp(1.0))));
    lr.push_back(std::log(std::abs(
        solvers::rk4_integrate(exp_field, Tensor::of({1.0}), 0.0, 1.0, h).y1[0] - std::exp(1.0))));
    lh.push_back(std::log(h));
  }
  auto slope = [&](const std::vector<double>& ys) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < ys.size(); ++i) {
      sx += lh[i];
      sy += ys[i];
      sxx += lh[i] * lh[i];
      sxy += lh[i] * ys[i];
    }
    const double n = static_cast<double>(ys.size());
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
  };
  const double se = slope(le), sr = slope(lr);
  c.note("euler slope = " + std::to_string(se) + ", rk4 slope = " + std::to_string(sr));
  c.require(std::abs(se - 1.0) <= 0.2, "euler order must be 1 +- 0.2");
  c.require(std::abs(sr - 4.0) <= 0.2, "rk4 order must be 4 +- 0.2");

  for (double tol : {1e-3, 1e-6}) {
    const auto out = solvers::dopri5_integrate(rot, Tensor::of({1.0, 0.0}), 0.0, M_PI / 2, tol);
    const double err = std::hypot(out.y1[0] - 0.0, out.y1[1] - 1.0);
    c.require(err <= 50.0 * tol, "dopri5 harmonic error at tol " + std::to_string(tol));
  }
}

// ---------------------------------------------------------------------------
// criterion 6: sequential-Euler / residual equivalence
// ---------------------------------------------------------------------------
void criterion6(Check& c) {
  Rng rng(606);
  for (int trial = 0; trial < 50; ++trial) {
    const int m = 1 + rng.uniform_int(6), n = 1 + rng.uniform_int(6);
    const Tensor w = random_tensor({m, n}, rng);
    const Tensor x = random_tensor({n}, rng);

    blocks::SkewOdeBlockParams meta;
    meta.gamma = 0.0;
    meta.t_end = 1.0;
    meta.activation = ActivationKind::tanh;
    Tape tape;
    const auto seq = blocks::euler_sequential_integrate(tape, meta, tape.leaf(w), tape.leaf(x),
                                                        tape.leaf(Tensor({m})), 1.0);

    Tensor wneg({n, m});
    for (int r = 0; r < m; ++r) {
      for (int col = 0; col < n; ++col) wneg[col * m + r] = -w[r * n + col];
    }
    Tape t2;
    const auto res = blocks::resnet_block_forward(t2, t2.leaf(w), t2.leaf(wneg), t2.leaf(x),
                                                  ActivationKind::tanh);
    double worst = 0.0;
    const Tensor& xa = tape.value(seq.x1);
    const Tensor& xb = t2.value(res.x1);
    for (std::int64_t i = 0; i < xa.size(); ++i) worst = std::max(worst, std::abs(xa[i] - xb[i]));
    const Tensor& za = tape.value(seq.z1);
    const Tensor& zb = t2.value(res.z1);
    for (std::int64_t i = 0; i < za.size(); ++i) worst = std::max(worst, std::abs(za[i] - zb[i]));
    c.require(worst <= 1e-12, "equivalence violated at trial " + std::to_string(trial));
  }
}

// ---------------------------------------------------------------------------
// shared desk-scale fixtures for criteria 7-10
// ---------------------------------------------------------------------------

struct DigitCorpus {
  data::Dataset train, test;
  bool used_mnist = false;
};

DigitCorpus load_digit_corpus() {
  DigitCorpus out;
  std::vector<fs::path> candidates;
  if (const char* env = std::getenv("SONETLAB_MNIST_DIR")) candidates.push_back(env);
  candidates.push_back("data/mnist");
  candidates.push_back("../data/mnist");
  for (const fs::path& dir : candidates) {
    if (fs::exists(dir / "train-images-idx3-ubyte")) {
      data::Dataset train = data::load_idx((dir / "train-images-idx3-ubyte").string(),
                                           (dir / "train-labels-idx1-ubyte").string());
      data::Dataset test = data::load_idx((dir / "t10k-images-idx3-ubyte").string(),
                                          (dir / "t10k-labels-idx1-ubyte").string());
      out.train = data::downsample2x(train.subset(5000));
      out.test = data::downsample2x(test.subset(1000));
      out.used_mnist = true;
      return out;
    }
  }
  out.train = data::make_synthetic(data::SyntheticKind::glyphs, 5000, 90001);
  out.test = data::make_synthetic(data::SyntheticKind::glyphs, 1000, 90002);
  return out;
}

struct MaskingStudy {
  DigitCorpus corpus;
  struct Row {
    std::string label;
    blocks::Model model;
    double a_nat = 0.0;
    double pgd20 = 0.0;
  };
  std::vector<Row> rows;  // euler, rk4, dopri5(0.1), dopri5(0.001)
  bool ready = false;
};

MaskingStudy& masking_study() {
  static MaskingStudy study;
  if (study.ready) return study;
  study.corpus = load_digit_corpus();
  std::cerr << "  [fixture] digit corpus: " << (study.corpus.used_mnist ? "MNIST (14x14)" : "synthetic glyphs (14x14)")
            << ", train=" << study.corpus.train.size() << ", test=" << study.corpus.test.size()
            << "\n";

  struct SolverRow {
    std::string label;
    solvers::Method method;
    double h_or_tol;
  };
  const SolverRow solver_rows[] = {{"euler", solvers::Method::euler, 1.0},
                                   {"rk4", solvers::Method::rk4, 1.0},
                                   {"dopri5(0.1)", solvers::Method::dopri5, 0.1},
                                   {"dopri5(0.001)", solvers::Method::dopri5, 0.001}};

  attacks::AttackConfig pgd = attacks::AttackConfig::defaults(attacks::AttackKind::pgd_linf);
  pgd.epsilon = 0.3;  // digit-scale threat
  pgd.eta1 = 0.03;
  pgd.iterations = 20;

  const data::Dataset attack_set = study.corpus.test.subset(200);

  for (const SolverRow& sr : solver_rows) {
    blocks::NetworkSpec spec;
    spec.architecture = blocks::Architecture::soblock;
    spec.channels = 8;
    spec.num_classes = 10;
    spec.input_shape = {1, 14, 14};
    spec.ode_activation = ActivationKind::elu;
    spec.gamma = 0.0;
    spec.solver.method = sr.method;
    if (sr.method == solvers::Method::dopri5) {
      spec.solver.tol = sr.h_or_tol;
    } else {
      spec.solver.h = sr.h_or_tol;
    }
    Rng init(424242);
    MaskingStudy::Row row{sr.label, blocks::assemble_network(spec, init), 0.0, 0.0};

    training::TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 50;
    tc.lr = 0.05;
    tc.lr_milestones = {3};
    tc.seed = 7;
    const auto t0 = std::chrono::steady_clock::now();
    const auto result = training::natural_train(row.model, study.corpus.train, tc);
    const double train_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const attacks::AttackConfig cfgs[] = {pgd};
    const auto report = attacks::robust_eval(row.model, study.corpus.test, {}, 7);
    const auto attacked = attacks::robust_eval(row.model, attack_set, cfgs, 7);
    row.a_nat = report.natural_accuracy;
    row.pgd20 = attacked.attacks[0].robust_accuracy();
    std::cerr << "  [fixture] " << sr.label << ": train acc=" << result.log.back().accuracy
              << " (" << train_s << "s), A_nat=" << row.a_nat << ", PGD20 A_rob=" << row.pgd20
              << "\n";
    study.rows.push_back(std::move(row));
  }
  study.ready = true;
  return study;
}

// ---------------------------------------------------------------------------
// criterion 7: adaptive step counts vs tolerance on a trained block
// ---------------------------------------------------------------------------
void criterion7(Check& c) {
  MaskingStudy& study = masking_study();
  // the dopri5(0.1)-trained model's first block, integrated at each tolerance
  blocks::Model& model = study.rows[2].model;
  const Tensor kernel = model.params[model.layout.first_skew_kernel].value;

  blocks::SkewOdeBlockParams p;
  p.kernel = kernel;
  p.conv = true;
  p.pad = 1;
  p.gamma = 0.0;
  p.activation = ActivationKind::elu;

  // widened first-block input from a test example
  const Tensor img = study.corpus.test.example(0);
  Tape tape;
  NodeId wide = tape.channel_copy(tape.leaf(img), 8);
  const Tensor x0 = tape.value(wide);

  int prev = 1 << 20;
  for (double tol : {0.1, 0.01, 0.001}) {
    solvers::SolverConfig cfg;
    cfg.method = solvers::Method::dopri5;
    cfg.tol = tol;
    solvers::StepTrace trace;
    (void)blocks::ode_block_forward(p, x0, cfg, &trace);
    const int steps = trace.accepted_steps();
    c.note("tol=" + std::to_string(tol) + ": accepted=" + std::to_string(steps) +
           ", rejected=" + std::to_string(trace.rejected_count));
    c.require(steps <= prev, "accepted step count must be non-increasing in tol");
    c.require(steps >= 2 && steps <= 6, "accepted step count must sit in the 2-6 range");
    prev = steps;
  }
}

// ---------------------------------------------------------------------------
// criterion 8: solver-ablation masking trend
// ---------------------------------------------------------------------------
void criterion8(Check& c) {
  MaskingStudy& study = masking_study();
  const auto& rows = study.rows;
  c.note("corpus: " + std::string(study.corpus.used_mnist ? "MNIST" : "synthetic glyphs"));
  for (const auto& row : rows) {
    c.note(row.label + ": A_nat=" + std::to_string(row.a_nat) +
           " PGD20=" + std::to_string(row.pgd20));
  }
  c.require(rows[0].pgd20 < 0.05, "euler-trained PGD20 robust accuracy must be < 5%");
  c.require(rows[1].pgd20 < 0.05, "rk4-trained PGD20 robust accuracy must be < 5%");
  const double fixed_best = std::max(rows[0].pgd20, rows[1].pgd20);
  c.require(rows[2].pgd20 >= fixed_best + 0.15,
            "dopri5(0.1) must beat the fixed-step models by >= 15 points");
  c.require(rows[2].pgd20 >= rows[3].pgd20 - 0.02,
            "dopri5(0.1) must not trail dopri5(0.001) by more than 2 points");
}

// ---------------------------------------------------------------------------
// criterion 9: robust-gradient and gradient-free attacks penetrate
// ---------------------------------------------------------------------------
void criterion9(Check& c) {
  MaskingStudy& study = masking_study();
  blocks::Model& model = study.rows[2].model;  // dopri5(0.1)
  const double pgd_rob = study.rows[2].pgd20;

  attacks::AttackConfig cw = attacks::AttackConfig::defaults(attacks::AttackKind::cw_linf);
  cw.epsilon = 0.3;
  cw.eta1 = 0.01;
  cw.iterations = 100;
  attacks::AttackConfig sp = attacks::AttackConfig::defaults(attacks::AttackKind::spsa);
  sp.epsilon = 0.3;
  sp.eta1 = 0.03;
  sp.iterations = 20;
  sp.spsa_samples = 32;

  const data::Dataset cw_set = study.corpus.test.subset(200);
  const attacks::AttackConfig cw_cfgs[] = {cw};
  const auto cw_report = attacks::robust_eval(model, cw_set, cw_cfgs, 7);
  const double cw_rob = cw_report.attacks[0].robust_accuracy();

  const data::Dataset sp_set = study.corpus.test.subset(100);
  const attacks::AttackConfig sp_cfgs[] = {sp};
  const auto sp_report = attacks::robust_eval(model, sp_set, sp_cfgs, 7);
  const double sp_rob = sp_report.attacks[0].robust_accuracy();

  c.note("PGD20=" + std::to_string(pgd_rob) + " CW=" + std::to_string(cw_rob) +
         " SPSA=" + std::to_string(sp_rob));
  c.require(cw_rob <= pgd_rob - 0.10, "CW robust accuracy must sit >= 10 points below PGD20");
  c.require(sp_rob <= pgd_rob - 0.10, "SPSA robust accuracy must sit >= 10 points below PGD20");
}

// ---------------------------------------------------------------------------
// criterion 10: TRADES beta ordering
// ---------------------------------------------------------------------------
void criterion10(Check& c) {
  const data::Dataset train = data::make_synthetic(data::SyntheticKind::blobs, 600, 777);
  const data::Dataset test = data::make_synthetic(data::SyntheticKind::blobs, 400, 778);

  attacks::AttackConfig pgd = attacks::AttackConfig::defaults(attacks::AttackKind::pgd_linf);
  pgd.epsilon = 0.08;
  pgd.eta1 = 0.01;
  pgd.iterations = 20;

  auto run = [&](double beta, double& a_nat, double& a_rob) {
    blocks::NetworkSpec spec;
    spec.architecture = blocks::Architecture::sonet;
    spec.dense = true;
    spec.layers = 1;
    spec.num_classes = 2;
    spec.input_shape = {16};
    spec.ode_activation = ActivationKind::elu;
    spec.solver.method = solvers::Method::rk4;
    spec.solver.h = 0.5;
    Rng init(31415);
    blocks::Model model = blocks::assemble_network(spec, init);

    training::TrainConfig tc;
    tc.epochs = 20;
    tc.batch_size = 30;
    tc.lr = 0.1;
    tc.lr_milestones = {15};
    tc.seed = 9;
    tc.trades_beta = beta;
    tc.trades_steps = 10;
    tc.trades_eta = 0.02;
    tc.trades_epsilon = 0.08;
    training::trades_train(model, train, tc);

    const attacks::AttackConfig cfgs[] = {pgd};
    const auto report = attacks::robust_eval(model, test, cfgs, 11);
    a_nat = report.natural_accuracy;
    a_rob = report.attacks[0].robust_accuracy();
  };

  double nat1 = 0, rob1 = 0, nat6 = 0, rob6 = 0;
  run(1.0, nat1, rob1);
  run(6.0, nat6, rob6);
  c.note("beta=1: A_nat=" + std::to_string(nat1) + " A_rob=" + std::to_string(rob1));
  c.note("beta=6: A_nat=" + std::to_string(nat6) + " A_rob=" + std::to_string(rob6));
  c.require(nat6 < nat1, "beta=6 must trade natural accuracy strictly down");
  c.require(rob6 > rob1, "beta=6 must push PGD20 robust accuracy strictly up");
}

// ---------------------------------------------------------------------------
// criterion 11: attack contracts, randomized
// ---------------------------------------------------------------------------
void criterion11(Check& c) {
  Rng rng(1111);
  blocks::NetworkSpec spec;
  spec.architecture = blocks::Architecture::sonet;
  spec.dense = true;
  spec.layers = 0;
  spec.num_classes = 3;
  spec.input_shape = {5};
  spec.ode_activation = ActivationKind::identity;
  spec.solver.method = solvers::Method::rk4;
  spec.solver.h = 0.5;

  Rng init(5);
  blocks::Model model = blocks::assemble_network(spec, init);
  blocks::Model constant = model;
  constant.params[0].value = Tensor(constant.params[0].value.shape());

  long checks = 0;
  const attacks::AttackKind kinds[] = {attacks::AttackKind::pgd_linf, attacks::AttackKind::pgd_l2,
                                       attacks::AttackKind::cw_linf, attacks::AttackKind::spsa};
  for (int trial = 0; trial < 2500 && c.ok; ++trial) {
    // fresh random weights every few trials
    if (trial % 5 == 0) {
      for (std::int64_t i = 0; i < model.params[0].value.size(); ++i) {
        model.params[0].value[i] = 1.5 * rng.normal();
      }
    }
    Tensor x({5});
    for (int i = 0; i < 5; ++i) x[i] = rng.uniform(0.0, 1.0);
    const int label = rng.uniform_int(3);

    attacks::AttackConfig cfg = attacks::AttackConfig::defaults(kinds[trial % 4]);
    cfg.epsilon = rng.uniform(0.01, 0.3);
    cfg.eta1 = rng.uniform(0.005, 0.2);
    cfg.iterations = 1 + rng.uniform_int(4);
    cfg.spsa_samples = 4;

    const bool use_constant = (trial % 10 == 0);
    const blocks::Model& m = use_constant ? constant : model;
    Rng attack_rng = rng.child(static_cast<std::uint64_t>(trial));
    const Tensor adv = attacks::run_attack(m, x, label, cfg, attack_rng);

    bool in_ball = true;
    if (cfg.kind == attacks::AttackKind::pgd_l2) {
      in_ball = norm2(sub(adv, x)) <= cfg.epsilon + 1e-9;
    } else {
      for (int i = 0; i < 5; ++i) {
        in_ball = in_ball && std::abs(adv[i] - x[i]) <= cfg.epsilon + 1e-12;
      }
    }
    bool in_domain = true;
    for (int i = 0; i < 5; ++i) in_domain = in_domain && adv[i] >= 0.0 && adv[i] <= 1.0;
    c.require(in_ball, "ball contract at trial " + std::to_string(trial));
    c.require(in_domain, "domain contract at trial " + std::to_string(trial));
    checks += 2;

    if (use_constant) {
      bool fixed = true;
      for (int i = 0; i < 5; ++i) fixed = fixed && adv[i] == x[i];
      c.require(fixed, "zero-gradient fixed point at trial " + std::to_string(trial));
      ++checks;
    }
    // a second randomized draw per trial to reach the contract-check budget
    Tensor x2({5});
    for (int i = 0; i < 5; ++i) x2[i] = rng.uniform(0.0, 1.0);
    cfg.epsilon = rng.uniform(0.01, 0.3);
    Rng attack_rng2 = rng.child(static_cast<std::uint64_t>(trial) * 2 + 1);
    const Tensor adv2 = attacks::run_attack(model, x2, label, cfg, attack_rng2);
    bool ok2 = true;
    if (cfg.kind == attacks::AttackKind::pgd_l2) {
      ok2 = norm2(sub(adv2, x2)) <= cfg.epsilon + 1e-9;
    } else {
      for (int i = 0; i < 5; ++i) ok2 = ok2 && std::abs(adv2[i] - x2[i]) <= cfg.epsilon + 1e-12;
    }
    for (int i = 0; i < 5; ++i) ok2 = ok2 && adv2[i] >= 0.0 && adv2[i] <= 1.0;
    c.require(ok2, "second-draw contract at trial " + std::to_string(trial));
    checks += 2;
  }
  c.note(std::to_string(checks) + " randomized contract checks");
  c.require(checks >= 10000, "must run at least 10k randomized checks");
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      std::istringstream in(argv[++i]);
      std::string tok;
      while (std::getline(in, tok, ',')) only.insert(std::stoi(tok));
    }
  }

  struct Entry {
    int id;
    const char* name;
    std::function<void(Check&)> fn;
  };
  const Entry entries[] = {
      {1, "Theorem-1 spectral certificate", criterion1},
      {2, "orthogonal state transition", criterion2},
      {3, "linear-case norm bounds", criterion3},
      {4, "autodiff exactness vs finite differences", criterion4},
      {5, "solver convergence orders", criterion5},
      {6, "sequential-Euler / residual equivalence", criterion6},
      {7, "adaptive step count vs tolerance", criterion7},
      {8, "solver-ablation masking trend", criterion8},
      {9, "CW and SPSA penetrate the masked model", criterion9},
      {10, "TRADES beta ordering", criterion10},
      {11, "attack contracts, randomized", criterion11},
  };

  int failures = 0;
  for (const Entry& e : entries) {
    if (!only.empty() && only.count(e.id) == 0) continue;
    Check check;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      e.fn(check);
    } catch (const std::exception& ex) {
      check.ok = false;
      check.detail << "    exception: " << ex.what() << "\n";
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (check.ok ? "[PASS]" : "[FAIL]") << " criterion " << e.id << ": " << e.name
              << " (" << seconds << "s)\n"
              << check.detail.str();
    std::cout.flush();
    if (!check.ok) ++failures;
  }
  if (failures) {
    std::cout << failures << " criterion(s) failed\n";
    return 1;
  }
  std::cout << "all criteria passed\n";
  return 0;
}
