#include "sonetlab/stability.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "sonetlab/errors.hpp"
#include "sonetlab/ops.hpp"
#include "sonetlab/solvers.hpp"

namespace sonetlab::stability {

namespace {

constexpr std::int64_t kMaxMaterializedDim = 4096;

}  // namespace

BlockMatrix build_block_matrix(const Tensor& w) {
  if (w.rank() != 2) throw ContractViolation("build_block_matrix: expected a matrix");
  const int m = w.dim(0), n = w.dim(1);
  const std::int64_t dim = static_cast<std::int64_t>(m) + n;
  if (dim > kMaxMaterializedDim) {
    throw ContractViolation("build_block_matrix: materialized matrix exceeds the desk-scale guard");
  }
  BlockMatrix out;
  out.a = Tensor({static_cast<int>(dim), static_cast<int>(dim)});
  // state order [x; z]: dx = -W^T z, dz = W x
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      const double v = w[static_cast<std::int64_t>(i) * n + j];
      out.a[static_cast<std::int64_t>(j) * dim + (n + i)] = -v;  // top-right -W^T
      out.a[static_cast<std::int64_t>(n + i) * dim + j] = v;     // bottom-left W
    }
  }
  return out;
}

Tensor materialize_conv_matrix(const Tensor& kernel, int h, int w, int pad) {
  if (kernel.rank() != 4) throw ContractViolation("materialize_conv_matrix: expected {co,ci,k,k}");
  const int ci = kernel.dim(1);
  const int co = kernel.dim(0);
  const std::int64_t n = static_cast<std::int64_t>(ci) * h * w;
  const std::int64_t m = static_cast<std::int64_t>(co) * h * w;
  if (n > kMaxMaterializedDim || m > kMaxMaterializedDim) {
    throw ContractViolation("materialize_conv_matrix: shape exceeds the desk-scale guard");
  }
  Tensor mat({static_cast<int>(m), static_cast<int>(n)});
  Tensor impulse({ci, h, w});
  for (std::int64_t j = 0; j < n; ++j) {
    impulse[j] = 1.0;
    const Tensor col = conv2d(kernel, impulse, 1, pad);
    impulse[j] = 0.0;
    for (std::int64_t i = 0; i < m; ++i) mat[i * n + j] = col[i];
  }
  return mat;
}

Tensor jacobian_diagonal(const blocks::SkewOdeBlockParams& p, const Tensor& x, const Tensor& z) {
  if (p.conv) throw ContractViolation("jacobian_diagonal: materialize conv blocks first");
  // pre-activations of the joint field, state order [x; z]
  Tensor pre_x = axpy(-p.gamma, x, scale(matvec_transpose(p.kernel, z), -1.0));
  Tensor pre_z = axpy(-p.gamma, z, matvec(p.kernel, x));
  Tensor d({static_cast<int>(pre_x.size() + pre_z.size())});
  for (std::int64_t i = 0; i < pre_x.size(); ++i) {
    d[i] = activate_derivative(p.activation, pre_x[i]);
  }
  for (std::int64_t i = 0; i < pre_z.size(); ++i) {
    d[pre_x.size() + i] = activate_derivative(p.activation, pre_z[i]);
  }
  return d;
}

Tensor block_jacobian(const blocks::SkewOdeBlockParams& p, const Tensor& x, const Tensor& z) {
  const BlockMatrix bm = build_block_matrix(p.kernel);
  const Tensor d = jacobian_diagonal(p, x, z);
  const std::int64_t dim = d.size();
  Tensor j({static_cast<int>(dim), static_cast<int>(dim)});
  for (std::int64_t r = 0; r < dim; ++r) {
    const double dr = d[r];
    for (std::int64_t c = 0; c < dim; ++c) {
      const double a = bm.a[r * dim + c] - (r == c ? p.gamma : 0.0);
      j[r * dim + c] = dr * a;
    }
  }
  return j;
}

double spectral_abscissa_bound(const Tensor& jacobian, const Tensor& d_diag, double gamma) {
  (void)jacobian;
  if (d_diag.size() == 0) throw ContractViolation("spectral_abscissa_bound: empty diagonal");
  double dmin = d_diag[0];
  for (std::int64_t i = 0; i < d_diag.size(); ++i) {
    if (d_diag[i] <= 0.0) {
      throw ContractViolation("spectral_abscissa_bound: certificate ineligible, sigma' <= 0");
    }
    dmin = std::min(dmin, d_diag[i]);
  }
  return -gamma * dmin;
}

std::vector<double> jacobi_eigenvalues(const Tensor& sym, double off_tol, int max_sweeps) {
  if (sym.rank() != 2 || sym.dim(0) != sym.dim(1)) {
    throw ContractViolation("jacobi_eigenvalues: expected a square matrix");
  }
  const int n = sym.dim(0);
  Tensor a = sym;
  auto at = [&](int r, int c) -> double& { return a[static_cast<std::int64_t>(r) * n + c]; };

  auto off_norm = [&]() {
    double s = 0.0;
    for (int r = 0; r < n; ++r) {
      for (int c = r + 1; c < n; ++c) s += 2.0 * at(r, c) * at(r, c);
    }
    return std::sqrt(s);
  };

  for (int sweep = 0; sweep < max_sweeps && off_norm() > off_tol; ++sweep) {
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double app = at(p, p), aqq = at(q, q);
        const double theta = (aqq - app) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }

  std::vector<double> eig(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) eig[static_cast<std::size_t>(i)] = at(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

std::string SpectralCertificate::to_json() const {
  nlohmann::json j;
  j["gamma"] = gamma;
  j["min_sigma_prime"] = min_sigma_prime;
  j["abscissa_bound"] = abscissa_bound;
  j["verdict"] = stable ? "stable" : "inconclusive";
  return j.dump();
}

SpectralCertificate certify_block(const blocks::SkewOdeBlockParams& p,
                                  std::span<const std::pair<Tensor, Tensor>> probes) {
  if (probes.empty()) throw ContractViolation("certify_block: need at least one probe state");
  SpectralCertificate cert;
  cert.gamma = p.gamma;
  double min_sp = HUGE_VAL;
  for (const auto& [x, z] : probes) {
    const Tensor d = jacobian_diagonal(p, x, z);
    for (std::int64_t i = 0; i < d.size(); ++i) min_sp = std::min(min_sp, d[i]);
  }
  cert.min_sigma_prime = min_sp;
  if (min_sp <= 0.0) {
    cert.abscissa_bound = 0.0;
    cert.stable = false;
    return cert;
  }
  cert.abscissa_bound = -p.gamma * min_sp;
  cert.stable = cert.abscissa_bound < 0.0;
  return cert;
}

double transition_orthogonality_check(const Tensor& w, double t, double tol) {
  const BlockMatrix bm = build_block_matrix(w);
  const std::int64_t dim = bm.a.dim(0);
  solvers::ValueField field = [&bm](double, const Tensor& y) { return matvec(bm.a, y); };

  // Phi columns: solutions from canonical basis vectors.
  Tensor phi({static_cast<int>(dim), static_cast<int>(dim)});
  for (std::int64_t j = 0; j < dim; ++j) {
    Tensor e({static_cast<int>(dim)});
    e[j] = 1.0;
    const auto out = solvers::dopri5_integrate(field, e, 0.0, t, tol);
    for (std::int64_t i = 0; i < dim; ++i) phi[i * dim + j] = out.y1[i];
  }

  double worst = 0.0;
  for (std::int64_t r = 0; r < dim; ++r) {
    for (std::int64_t c = 0; c < dim; ++c) {
      double s = 0.0;
      for (std::int64_t k = 0; k < dim; ++k) s += phi[k * dim + r] * phi[k * dim + c];
      const double target = (r == c) ? 1.0 : 0.0;
      worst = std::max(worst, std::abs(s - target));
    }
  }
  return worst;
}

std::vector<LyapunovRow> lyapunov_probe(const blocks::SkewOdeBlockParams& p,
                                        const solvers::SolverConfig& solver, const Tensor& x0,
                                        std::span<const double> radii,
                                        std::span<const double> horizons, int samples, Rng& rng) {
  if (samples < 1) throw ContractViolation("lyapunov_probe: samples must be >= 1");
  std::vector<LyapunovRow> rows;
  for (double horizon : horizons) {
    blocks::SkewOdeBlockParams ph = p;
    ph.t_end = horizon;
    const Tensor base = blocks::ode_block_forward(ph, x0, solver);
    for (double radius : radii) {
      LyapunovRow row;
      row.radius = radius;
      row.horizon = horizon;
      for (int s = 0; s < samples; ++s) {
        // random direction scaled to the radius (max over the sphere)
        Tensor dir(x0.shape());
        double n2 = 0.0;
        do {
          for (std::int64_t i = 0; i < dir.size(); ++i) dir[i] = rng.normal();
          n2 = norm2(dir);
        } while (n2 == 0.0);
        Tensor xp = axpy(radius / n2, dir, x0);
        const Tensor out = blocks::ode_block_forward(ph, xp, solver);
        row.max_deviation = std::max(row.max_deviation, norm2(sub(out, base)));
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::string lyapunov_table_json(std::span<const LyapunovRow> rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const LyapunovRow& r : rows) {
    arr.push_back({{"radius", r.radius}, {"horizon", r.horizon}, {"max_deviation", r.max_deviation}});
  }
  return arr.dump(2);
}

}  // namespace sonetlab::stability
