#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sonetlab/blocks.hpp"
#include "sonetlab/rng.hpp"
#include "sonetlab/tensor.hpp"

namespace sonetlab::stability {

// [[0, -W^T], [W, 0]] over the joint state [x; z]; skew-symmetric by
// construction — the entries are written, never computed.
struct BlockMatrix {
  Tensor a;  // {(m+n), (m+n)}
};

BlockMatrix build_block_matrix(const Tensor& w);

// Conv kernels are materialized to their dense matrix form (columns are the
// responses to unit impulses) so the same spectral machinery applies. Guarded
// to small shapes.
Tensor materialize_conv_matrix(const Tensor& kernel, int h, int w, int pad);

// sigma'(pre-activation) at the probe state: the diagonal of D.
Tensor jacobian_diagonal(const blocks::SkewOdeBlockParams& p, const Tensor& x, const Tensor& z);

// J = D (A - gamma I) evaluated at (x, z).
Tensor block_jacobian(const blocks::SkewOdeBlockParams& p, const Tensor& x, const Tensor& z);

// The similar matrix D^{1/2}(A - gamma I)D^{1/2} has symmetric part -gamma D,
// so every eigenvalue real part is at most -gamma * min(diag D). `jacobian`
// is accepted for signature parity with the certificate flow; the bound is
// closed-form. Throws when D has a non-positive entry (ineligible).
double spectral_abscissa_bound(const Tensor& jacobian, const Tensor& d_diag, double gamma);

// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, swept until
// the off-diagonal Frobenius norm falls below off_tol. Returned ascending.
std::vector<double> jacobi_eigenvalues(const Tensor& sym, double off_tol = 1e-10,
                                       int max_sweeps = 100);

struct SpectralCertificate {
  double gamma = 0.0;
  double min_sigma_prime = 0.0;
  double abscissa_bound = 0.0;
  bool stable = false;  // requires abscissa_bound < 0
  std::string to_json() const;
};

// Certificate over a set of probe states (x, z): bound = -gamma * min sigma'.
SpectralCertificate certify_block(const blocks::SkewOdeBlockParams& p,
                                  std::span<const std::pair<Tensor, Tensor>> probes);

// Integrates the linear system d[x;z]/dt = A [x;z] from every canonical basis
// vector (identity activation, gamma = 0), assembles Phi column-wise and
// returns max|Phi^T Phi - I|.
double transition_orthogonality_check(const Tensor& w, double t, double tol);

struct LyapunovRow {
  double radius = 0.0;
  double horizon = 0.0;
  double max_deviation = 0.0;
};

// For each (radius, horizon): max over `samples` random directions of the
// output deviation of the block, ||f(x0; t) - f(x0'; t)||_2 with
// ||x0 - x0'|| = radius.
std::vector<LyapunovRow> lyapunov_probe(const blocks::SkewOdeBlockParams& p,
                                        const solvers::SolverConfig& solver, const Tensor& x0,
                                        std::span<const double> radii,
                                        std::span<const double> horizons, int samples, Rng& rng);

std::string lyapunov_table_json(std::span<const LyapunovRow> rows);

}  // namespace sonetlab::stability
