#include "sonetlab/ops.hpp"

#include <algorithm>
#include <cmath>

#include "sonetlab/errors.hpp"

namespace sonetlab {

namespace {

void require_matrix(const Tensor& W, const char* where) {
  if (W.rank() != 2) {
    throw ContractViolation(std::string(where) + ": expected a matrix, got " + W.shape_str());
  }
}

void require_kernel_image(const Tensor& K, const Tensor& x, const char* where) {
  if (K.rank() != 4 || x.rank() != 3) {
    throw ContractViolation(std::string(where) + ": expected kernel {co,ci,k,k} and image {c,h,w}, got " +
                            K.shape_str() + " and " + x.shape_str());
  }
  if (K.dim(2) != K.dim(3)) {
    throw ContractViolation(std::string(where) + ": non-square kernel " + K.shape_str());
  }
  if (K.dim(2) % 2 == 0) {
    throw ContractViolation(std::string(where) + ": kernel extent must be odd, got " + K.shape_str());
  }
}

}  // namespace

Tensor matvec(const Tensor& W, const Tensor& x) {
  require_matrix(W, "matvec");
  const int m = W.dim(0), n = W.dim(1);
  if (x.size() != n) {
    throw ContractViolation("matvec: shape mismatch " + W.shape_str() + " vs " + x.shape_str());
  }
  Tensor out({m});
  const double* w = W.data();
  const double* xv = x.data();
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    const double* row = w + static_cast<std::int64_t>(i) * n;
    for (int j = 0; j < n; ++j) s += row[j] * xv[j];
    out[i] = s;
  }
  return out;
}

Tensor matvec_transpose(const Tensor& W, const Tensor& z) {
  require_matrix(W, "matvec_transpose");
  const int m = W.dim(0), n = W.dim(1);
  if (z.size() != m) {
    throw ContractViolation("matvec_transpose: shape mismatch " + W.shape_str() + " vs " +
                            z.shape_str());
  }
  Tensor out({n});
  const double* w = W.data();
  for (int i = 0; i < m; ++i) {
    const double zi = z[i];
    const double* row = w + static_cast<std::int64_t>(i) * n;
    for (int j = 0; j < n; ++j) out[j] += zi * row[j];
  }
  return out;
}

Tensor outer(const Tensor& a, const Tensor& b) {
  const int m = static_cast<int>(a.size()), n = static_cast<int>(b.size());
  Tensor out({m, n});
  for (int i = 0; i < m; ++i) {
    const double ai = a[i];
    double* row = out.data() + static_cast<std::int64_t>(i) * n;
    for (int j = 0; j < n; ++j) row[j] = ai * b[j];
  }
  return out;
}

int conv_out_extent(int in, int k, int stride, int pad) {
  const int e = (in + 2 * pad - k) / stride + 1;
  if (e <= 0) {
    throw ContractViolation("conv2d: output extent would be non-positive");
  }
  return e;
}

Tensor conv2d(const Tensor& K, const Tensor& x, int stride, int pad) {
  require_kernel_image(K, x, "conv2d");
  if (stride < 1 || pad < 0) throw ContractViolation("conv2d: bad stride/pad");
  const int co = K.dim(0), ci = K.dim(1), k = K.dim(2);
  if (x.dim(0) != ci) {
    throw ContractViolation("conv2d: channel mismatch " + K.shape_str() + " vs " + x.shape_str());
  }
  const int h = x.dim(1), w = x.dim(2);
  const int ho = conv_out_extent(h, k, stride, pad);
  const int wo = conv_out_extent(w, k, stride, pad);
  Tensor out({co, ho, wo});

  const double* kd = K.data();
  const double* xd = x.data();
  double* od = out.data();
  for (int o = 0; o < co; ++o) {
    double* oplane = od + static_cast<std::int64_t>(o) * ho * wo;
    for (int c = 0; c < ci; ++c) {
      const double* xplane = xd + static_cast<std::int64_t>(c) * h * w;
      const double* kplane = kd + (static_cast<std::int64_t>(o) * ci + c) * k * k;
      for (int u = 0; u < k; ++u) {
        for (int v = 0; v < k; ++v) {
          const double wgt = kplane[u * k + v];
          if (wgt == 0.0) continue;
          for (int oi = 0; oi < ho; ++oi) {
            const int iy = oi * stride - pad + u;
            if (iy < 0 || iy >= h) continue;
            // valid oj range so that ix = oj*stride - pad + v lands in [0, w)
            int lo = 0, hi = wo - 1;
            const int off = v - pad;
            if (off < 0) lo = std::max(lo, (-off + stride - 1) / stride);
            hi = std::min(hi, (w - 1 - off) / stride);
            const double* xrow = xplane + static_cast<std::int64_t>(iy) * w;
            double* orow = oplane + static_cast<std::int64_t>(oi) * wo;
            for (int oj = lo; oj <= hi; ++oj) {
              orow[oj] += wgt * xrow[oj * stride + off];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_adjoint_input(const Tensor& K, const Tensor& g, int stride, int pad,
                            int h_in, int w_in) {
  if (K.rank() != 4 || g.rank() != 3) {
    throw ContractViolation("conv2d_adjoint_input: bad ranks " + K.shape_str() + ", " +
                            g.shape_str());
  }
  const int co = K.dim(0), ci = K.dim(1), k = K.dim(2);
  if (g.dim(0) != co) {
    throw ContractViolation("conv2d_adjoint_input: channel mismatch");
  }
  const int ho = g.dim(1), wo = g.dim(2);
  if (ho != conv_out_extent(h_in, k, stride, pad) || wo != conv_out_extent(w_in, k, stride, pad)) {
    throw ContractViolation("conv2d_adjoint_input: upstream shape inconsistent with geometry");
  }
  Tensor out({ci, h_in, w_in});

  const double* kd = K.data();
  const double* gd = g.data();
  double* od = out.data();
  for (int o = 0; o < co; ++o) {
    const double* gplane = gd + static_cast<std::int64_t>(o) * ho * wo;
    for (int c = 0; c < ci; ++c) {
      double* xplane = od + static_cast<std::int64_t>(c) * h_in * w_in;
      const double* kplane = kd + (static_cast<std::int64_t>(o) * ci + c) * k * k;
      for (int u = 0; u < k; ++u) {
        for (int v = 0; v < k; ++v) {
          const double wgt = kplane[u * k + v];
          if (wgt == 0.0) continue;
          for (int oi = 0; oi < ho; ++oi) {
            const int iy = oi * stride - pad + u;
            if (iy < 0 || iy >= h_in) continue;
            int lo = 0, hi = wo - 1;
            const int off = v - pad;
            if (off < 0) lo = std::max(lo, (-off + stride - 1) / stride);
            hi = std::min(hi, (w_in - 1 - off) / stride);
            double* xrow = xplane + static_cast<std::int64_t>(iy) * w_in;
            const double* grow = gplane + static_cast<std::int64_t>(oi) * wo;
            for (int oj = lo; oj <= hi; ++oj) {
              xrow[oj * stride + off] += wgt * grow[oj];
            }
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_adjoint_kernel(const Tensor& x, const Tensor& g, int stride, int pad,
                             int kh, int kw) {
  if (x.rank() != 3 || g.rank() != 3) {
    throw ContractViolation("conv2d_adjoint_kernel: bad ranks");
  }
  const int ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int co = g.dim(0), ho = g.dim(1), wo = g.dim(2);
  Tensor out({co, ci, kh, kw});

  const double* xd = x.data();
  const double* gd = g.data();
  double* od = out.data();
  for (int o = 0; o < co; ++o) {
    const double* gplane = gd + static_cast<std::int64_t>(o) * ho * wo;
    for (int c = 0; c < ci; ++c) {
      const double* xplane = xd + static_cast<std::int64_t>(c) * h * w;
      double* kplane = od + (static_cast<std::int64_t>(o) * ci + c) * kh * kw;
      for (int u = 0; u < kh; ++u) {
        for (int v = 0; v < kw; ++v) {
          double s = 0.0;
          for (int oi = 0; oi < ho; ++oi) {
            const int iy = oi * stride - pad + u;
            if (iy < 0 || iy >= h) continue;
            int lo = 0, hi = wo - 1;
            const int off = v - pad;
            if (off < 0) lo = std::max(lo, (-off + stride - 1) / stride);
            hi = std::min(hi, (w - 1 - off) / stride);
            const double* xrow = xplane + static_cast<std::int64_t>(iy) * w;
            const double* grow = gplane + static_cast<std::int64_t>(oi) * wo;
            for (int oj = lo; oj <= hi; ++oj) {
              s += xrow[oj * stride + off] * grow[oj];
            }
          }
          kplane[u * kw + v] = s;
        }
      }
    }
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  Tensor p(logits.shape());
  const double m = *std::max_element(logits.data(), logits.data() + logits.size());
  double z = 0.0;
  for (std::int64_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (std::int64_t i = 0; i < logits.size(); ++i) p[i] /= z;
  return p;
}

double cross_entropy_logits_value(const Tensor& logits, int label) {
  const std::int64_t c = logits.size();
  if (c < 2) throw ContractViolation("cross_entropy: need at least 2 classes");
  if (label < 0 || label >= c) throw ContractViolation("cross_entropy: label out of range");
  const double m = *std::max_element(logits.data(), logits.data() + c);
  double z = 0.0;
  for (std::int64_t i = 0; i < c; ++i) z += std::exp(logits[i] - m);
  return std::log(z) - (logits[label] - m);
}

double kl_consistency_value(const Tensor& logits_adv, const Tensor& logits_nat) {
  require_same_shape(logits_adv, logits_nat, "kl_consistency");
  // KL(p || q) = sum p (log p - log q) with p, q from stabilized softmax.
  const std::int64_t c = logits_nat.size();
  const double mp = *std::max_element(logits_nat.data(), logits_nat.data() + c);
  const double mq = *std::max_element(logits_adv.data(), logits_adv.data() + c);
  double zp = 0.0, zq = 0.0;
  for (std::int64_t i = 0; i < c; ++i) {
    zp += std::exp(logits_nat[i] - mp);
    zq += std::exp(logits_adv[i] - mq);
  }
  const double lzp = std::log(zp), lzq = std::log(zq);
  double kl = 0.0;
  for (std::int64_t i = 0; i < c; ++i) {
    const double logp = logits_nat[i] - mp - lzp;
    const double logq = logits_adv[i] - mq - lzq;
    kl += std::exp(logp) * (logp - logq);
  }
  return std::max(kl, 0.0);
}

double cw_margin_value(const Tensor& logits, int label) {
  const std::int64_t c = logits.size();
  if (c < 2) throw ContractViolation("cw_margin: need at least 2 classes");
  if (label < 0 || label >= c) throw ContractViolation("cw_margin: label out of range");
  double best_other = -HUGE_VAL;
  for (std::int64_t i = 0; i < c; ++i) {
    if (i == label) continue;
    if (logits[i] > best_other) best_other = logits[i];
  }
  return logits[label] - best_other;
}

int argmax_lowest(const Tensor& v) {
  int best = 0;
  for (std::int64_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace sonetlab
