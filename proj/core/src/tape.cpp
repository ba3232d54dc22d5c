#include "sonetlab/tape.hpp"

#include <cmath>
#include <cstring>

#include "sonetlab/errors.hpp"
#include "sonetlab/ops.hpp"

namespace sonetlab {

const Tensor& GradientMap::at(NodeId id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) throw ContractViolation("GradientMap: node has no gradient entry");
  return it->second;
}

NodeId ComputationTape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

const ComputationTape::Node& ComputationTape::node(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw ContractViolation("tape: node id out of range");
  }
  return nodes_[static_cast<std::size_t>(id)];
}

const Tensor& ComputationTape::value(NodeId id) const { return node(id).value; }

bool ComputationTape::is_leaf(NodeId id) const { return node(id).op == Node::Op::kLeaf; }

void ComputationTape::clear() { nodes_.clear(); }

NodeId ComputationTape::leaf(Tensor value) {
  Node n;
  n.op = Node::Op::kLeaf;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId ComputationTape::lincomb(std::span<const NodeId> inputs, std::span<const double> coeffs) {
  if (inputs.empty() || inputs.size() != coeffs.size()) {
    throw ContractViolation("lincomb: inputs/coeffs size mismatch");
  }
  Node n;
  n.op = Node::Op::kLincomb;
  n.inputs.assign(inputs.begin(), inputs.end());
  n.coeffs.assign(coeffs.begin(), coeffs.end());
  const Tensor& first = value(inputs[0]);
  Tensor out(first.shape());
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    const Tensor& v = value(inputs[t]);
    require_same_shape(first, v, "lincomb");
    const double c = coeffs[t];
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] += c * v[i];
  }
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId ComputationTape::add(NodeId a, NodeId b) {
  const NodeId in[] = {a, b};
  const double c[] = {1.0, 1.0};
  return lincomb(in, c);
}

NodeId ComputationTape::scale(NodeId a, double c) {
  const NodeId in[] = {a};
  const double cc[] = {c};
  return lincomb(in, cc);
}

NodeId ComputationTape::add_scaled(NodeId a, double c, NodeId b) {
  const NodeId in[] = {a, b};
  const double cc[] = {1.0, c};
  return lincomb(in, cc);
}

NodeId ComputationTape::linear(NodeId w, NodeId x) {
  Node n;
  n.op = Node::Op::kLinear;
  n.inputs = {w, x};
  n.value = matvec(value(w), value(x));
  return push(std::move(n));
}

NodeId ComputationTape::linear_neg_transpose(NodeId w, NodeId z) {
  Node n;
  n.op = Node::Op::kLinearNegT;
  n.inputs = {w, z};
  n.value = sonetlab::scale(matvec_transpose(value(w), value(z)), -1.0);
  return push(std::move(n));
}

NodeId ComputationTape::conv2d(NodeId k, NodeId x, int stride, int pad) {
  Node n;
  n.op = Node::Op::kConv2d;
  n.inputs = {k, x};
  n.attr0 = stride;
  n.attr1 = pad;
  n.value = sonetlab::conv2d(value(k), value(x), stride, pad);
  return push(std::move(n));
}

NodeId ComputationTape::conv2d_neg_transpose(NodeId k, NodeId z, int stride, int pad) {
  const Tensor& kv = value(k);
  const Tensor& zv = value(z);
  if (kv.rank() != 4 || zv.rank() != 3) {
    throw ContractViolation("conv2d_neg_transpose: bad ranks");
  }
  if (stride != 1) {
    // The ODE state must keep one shape along the trajectory.
    throw ContractViolation("conv2d_neg_transpose: stride must be 1");
  }
  // With stride 1 and size-preserving padding the adjoint maps back to an
  // image with the same spatial extent and c_in channels.
  const int kk = kv.dim(2);
  const int h_in = zv.dim(1) ;
  const int w_in = zv.dim(2);
  if (conv_out_extent(h_in, kk, 1, pad) != h_in || conv_out_extent(w_in, kk, 1, pad) != w_in) {
    throw ContractViolation("conv2d_neg_transpose: padding must preserve spatial size");
  }
  Node n;
  n.op = Node::Op::kConv2dNegT;
  n.inputs = {k, z};
  n.attr0 = stride;
  n.attr1 = pad;
  n.value = sonetlab::scale(conv2d_adjoint_input(kv, zv, stride, pad, h_in, w_in), -1.0);
  return push(std::move(n));
}

NodeId ComputationTape::activation(ActivationKind kind, NodeId x) {
  Node n;
  n.op = Node::Op::kActivation;
  n.act = kind;
  n.inputs = {x};
  const Tensor& xv = value(x);
  Tensor out(xv.shape());
  for (std::int64_t i = 0; i < xv.size(); ++i) out[i] = activate(kind, xv[i]);
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId ComputationTape::batchnorm_affine(NodeId x, NodeId gamma, NodeId beta,
                                         const Tensor& mean, const Tensor& var, double eps) {
  const Tensor& xv = value(x);
  if (xv.rank() != 3) throw ContractViolation("batchnorm: expected {c,h,w} input");
  const int c = xv.dim(0);
  if (mean.size() != c || var.size() != c || value(gamma).size() != c ||
      value(beta).size() != c) {
    throw ContractViolation("batchnorm: per-channel parameter size mismatch");
  }
  Node n;
  n.op = Node::Op::kBatchNormAffine;
  n.inputs = {x, gamma, beta};
  n.aux_mean = mean;
  Tensor inv_std({c});
  for (int i = 0; i < c; ++i) inv_std[i] = 1.0 / std::sqrt(var[i] + eps);
  n.aux_inv_std = std::move(inv_std);

  const Tensor& g = value(gamma);
  const Tensor& b = value(beta);
  const std::int64_t plane = static_cast<std::int64_t>(xv.dim(1)) * xv.dim(2);
  Tensor out(xv.shape());
  for (int ch = 0; ch < c; ++ch) {
    const double s = g[ch] * n.aux_inv_std[ch];
    const double m = n.aux_mean[ch];
    const double* xi = xv.data() + ch * plane;
    double* oi = out.data() + ch * plane;
    for (std::int64_t i = 0; i < plane; ++i) oi[i] = (xi[i] - m) * s + b[ch];
  }
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId ComputationTape::concat(NodeId a, NodeId b) {
  Node n;
  n.op = Node::Op::kConcat;
  n.inputs = {a, b};
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Tensor out({static_cast<int>(av.size() + bv.size())});
  std::memcpy(out.data(), av.data(), sizeof(double) * static_cast<std::size_t>(av.size()));
  std::memcpy(out.data() + av.size(), bv.data(),
              sizeof(double) * static_cast<std::size_t>(bv.size()));
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId ComputationTape::slice(NodeId y, std::int64_t offset, std::vector<int> shape) {
  Node n;
  n.op = Node::Op::kSlice;
  n.inputs = {y};
  n.offset = offset;
  Tensor out(std::move(shape));
  const Tensor& yv = value(y);
  if (offset < 0 || offset + out.size() > yv.size()) {
    throw ContractViolation("slice: range out of bounds");
  }
  std::memcpy(out.data(), yv.data() + offset,
              sizeof(double) * static_cast<std::size_t>(out.size()));
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId ComputationTape::channel_copy(NodeId x, int factor) {
  if (factor < 1) throw ContractViolation("channel_copy: factor must be >= 1");
  const Tensor& xv = value(x);
  if (xv.rank() != 3) throw ContractViolation("channel_copy: expected {c,h,w} input");
  const int c = xv.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(xv.dim(1)) * xv.dim(2);
  Node n;
  n.op = Node::Op::kChannelCopy;
  n.inputs = {x};
  n.attr0 = factor;
  Tensor out({c * factor, xv.dim(1), xv.dim(2)});
  for (int q = 0; q < c * factor; ++q) {
    std::memcpy(out.data() + q * plane, xv.data() + (q % c) * plane,
                sizeof(double) * static_cast<std::size_t>(plane));
  }
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId ComputationTape::avg_pool(NodeId x) {
  const Tensor& xv = value(x);
  if (xv.rank() != 3) throw ContractViolation("avg_pool: expected {c,h,w} input");
  const int c = xv.dim(0);
  const std::int64_t plane = static_cast<std::int64_t>(xv.dim(1)) * xv.dim(2);
  Node n;
  n.op = Node::Op::kAvgPool;
  n.inputs = {x};
  Tensor out({c});
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    const double* xi = xv.data() + ch * plane;
    for (std::int64_t i = 0; i < plane; ++i) s += xi[i];
    out[ch] = s / static_cast<double>(plane);
  }
  n.value = std::move(out);
  return push(std::move(n));
}

NodeId ComputationTape::sum(NodeId x) {
  Node n;
  n.op = Node::Op::kSum;
  n.inputs = {x};
  n.value = Tensor::scalar(sonetlab::sum(value(x)));
  return push(std::move(n));
}

NodeId ComputationTape::dot(NodeId a, NodeId b) {
  Node n;
  n.op = Node::Op::kDot;
  n.inputs = {a, b};
  n.value = Tensor::scalar(sonetlab::dot(value(a), value(b)));
  return push(std::move(n));
}

NodeId ComputationTape::cross_entropy(NodeId logits, int label) {
  Node n;
  n.op = Node::Op::kCrossEntropy;
  n.inputs = {logits};
  n.attr0 = label;
  n.value = Tensor::scalar(cross_entropy_logits_value(value(logits), label));
  return push(std::move(n));
}

NodeId ComputationTape::kl_consistency(NodeId logits_adv, NodeId logits_nat) {
  Node n;
  n.op = Node::Op::kKlConsistency;
  n.inputs = {logits_adv, logits_nat};
  n.value = Tensor::scalar(kl_consistency_value(value(logits_adv), value(logits_nat)));
  return push(std::move(n));
}

NodeId ComputationTape::cw_margin(NodeId logits, int label) {
  Node n;
  n.op = Node::Op::kCwMargin;
  n.inputs = {logits};
  n.attr0 = label;
  n.value = Tensor::scalar(cw_margin_value(value(logits), label));
  return push(std::move(n));
}

Tensor ComputationTape::eval(const Node& n) const {
  switch (n.op) {
    case Node::Op::kLeaf:
      return n.value;
    case Node::Op::kLincomb: {
      Tensor out(value(n.inputs[0]).shape());
      for (std::size_t t = 0; t < n.inputs.size(); ++t) {
        const Tensor& v = value(n.inputs[t]);
        const double c = n.coeffs[t];
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] += c * v[i];
      }
      return out;
    }
    case Node::Op::kLinear:
      return matvec(value(n.inputs[0]), value(n.inputs[1]));
    case Node::Op::kLinearNegT:
      return sonetlab::scale(matvec_transpose(value(n.inputs[0]), value(n.inputs[1])), -1.0);
    case Node::Op::kConv2d:
      return sonetlab::conv2d(value(n.inputs[0]), value(n.inputs[1]), n.attr0, n.attr1);
    case Node::Op::kConv2dNegT: {
      const Tensor& zv = value(n.inputs[1]);
      return sonetlab::scale(
          conv2d_adjoint_input(value(n.inputs[0]), zv, n.attr0, n.attr1, zv.dim(1), zv.dim(2)),
          -1.0);
    }
    case Node::Op::kActivation: {
      const Tensor& xv = value(n.inputs[0]);
      Tensor out(xv.shape());
      for (std::int64_t i = 0; i < xv.size(); ++i) out[i] = activate(n.act, xv[i]);
      return out;
    }
    case Node::Op::kBatchNormAffine: {
      const Tensor& xv = value(n.inputs[0]);
      const Tensor& g = value(n.inputs[1]);
      const Tensor& b = value(n.inputs[2]);
      const int c = xv.dim(0);
      const std::int64_t plane = static_cast<std::int64_t>(xv.dim(1)) * xv.dim(2);
      Tensor out(xv.shape());
      for (int ch = 0; ch < c; ++ch) {
        const double s = g[ch] * n.aux_inv_std[ch];
        const double m = n.aux_mean[ch];
        const double* xi = xv.data() + ch * plane;
        double* oi = out.data() + ch * plane;
        for (std::int64_t i = 0; i < plane; ++i) oi[i] = (xi[i] - m) * s + b[ch];
      }
      return out;
    }
    case Node::Op::kConcat: {
      const Tensor& av = value(n.inputs[0]);
      const Tensor& bv = value(n.inputs[1]);
      Tensor out({static_cast<int>(av.size() + bv.size())});
      std::memcpy(out.data(), av.data(), sizeof(double) * static_cast<std::size_t>(av.size()));
      std::memcpy(out.data() + av.size(), bv.data(),
                  sizeof(double) * static_cast<std::size_t>(bv.size()));
      return out;
    }
    case Node::Op::kSlice: {
      Tensor out(n.value.shape());
      std::memcpy(out.data(), value(n.inputs[0]).data() + n.offset,
                  sizeof(double) * static_cast<std::size_t>(out.size()));
      return out;
    }
    case Node::Op::kChannelCopy: {
      const Tensor& xv = value(n.inputs[0]);
      const int c = xv.dim(0);
      const std::int64_t plane = static_cast<std::int64_t>(xv.dim(1)) * xv.dim(2);
      Tensor out(n.value.shape());
      for (int q = 0; q < c * n.attr0; ++q) {
        std::memcpy(out.data() + q * plane, xv.data() + (q % c) * plane,
                    sizeof(double) * static_cast<std::size_t>(plane));
      }
      return out;
    }
    case Node::Op::kAvgPool: {
      const Tensor& xv = value(n.inputs[0]);
      const int c = xv.dim(0);
      const std::int64_t plane = static_cast<std::int64_t>(xv.dim(1)) * xv.dim(2);
      Tensor out({c});
      for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        const double* xi = xv.data() + ch * plane;
        for (std::int64_t i = 0; i < plane; ++i) s += xi[i];
        out[ch] = s / static_cast<double>(plane);
      }
      return out;
    }
    case Node::Op::kSum:
      return Tensor::scalar(sonetlab::sum(value(n.inputs[0])));
    case Node::Op::kDot:
      return Tensor::scalar(sonetlab::dot(value(n.inputs[0]), value(n.inputs[1])));
    case Node::Op::kCrossEntropy:
      return Tensor::scalar(cross_entropy_logits_value(value(n.inputs[0]), n.attr0));
    case Node::Op::kKlConsistency:
      return Tensor::scalar(kl_consistency_value(value(n.inputs[0]), value(n.inputs[1])));
    case Node::Op::kCwMargin:
      return Tensor::scalar(cw_margin_value(value(n.inputs[0]), n.attr0));
  }
  throw InternalError("tape: unknown op");
}

void ComputationTape::replay_check() const {
  for (const Node& n : nodes_) {
    if (n.op == Node::Op::kLeaf) continue;
    const Tensor recomputed = eval(n);
    if (recomputed.size() != n.value.size() ||
        std::memcmp(recomputed.data(), n.value.data(),
                    sizeof(double) * static_cast<std::size_t>(n.value.size())) != 0) {
      throw InternalError("tape replay mismatch");
    }
  }
}

GradientMap ComputationTape::backprop(NodeId output, const Tensor& seed) const {
  const Node& out = node(output);
  require_same_shape(out.value, seed, "backprop seed");

  std::vector<Tensor> adj(nodes_.size());
  adj[static_cast<std::size_t>(output)] = seed;

  for (NodeId id = output; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    Tensor& g = adj[static_cast<std::size_t>(id)];
    if (!g.defined()) continue;
    auto into = [&](NodeId in, const Tensor& contribution) {
      accumulate(adj[static_cast<std::size_t>(in)], contribution);
    };

    switch (n.op) {
      case Node::Op::kLeaf:
        break;
      case Node::Op::kLincomb: {
        for (std::size_t t = 0; t < n.inputs.size(); ++t) {
          into(n.inputs[t], sonetlab::scale(g, n.coeffs[t]));
        }
        break;
      }
      case Node::Op::kLinear: {
        const Tensor& w = value(n.inputs[0]);
        const Tensor& x = value(n.inputs[1]);
        into(n.inputs[0], outer(g, x));
        into(n.inputs[1], matvec_transpose(w, g));
        break;
      }
      case Node::Op::kLinearNegT: {
        // out = -W^T z
        const Tensor& w = value(n.inputs[0]);
        const Tensor& z = value(n.inputs[1]);
        into(n.inputs[0], sonetlab::scale(outer(z, g), -1.0));
        into(n.inputs[1], sonetlab::scale(matvec(w, g), -1.0));
        break;
      }
      case Node::Op::kConv2d: {
        const Tensor& k = value(n.inputs[0]);
        const Tensor& x = value(n.inputs[1]);
        into(n.inputs[0], conv2d_adjoint_kernel(x, g, n.attr0, n.attr1, k.dim(2), k.dim(3)));
        into(n.inputs[1], conv2d_adjoint_input(k, g, n.attr0, n.attr1, x.dim(1), x.dim(2)));
        break;
      }
      case Node::Op::kConv2dNegT: {
        // out = -adjoint_input(K, z); d/dz = -conv2d(K, g), d/dK = -adjoint_kernel(g, z)
        const Tensor& k = value(n.inputs[0]);
        const Tensor& z = value(n.inputs[1]);
        into(n.inputs[0], sonetlab::scale(
                              conv2d_adjoint_kernel(g, z, n.attr0, n.attr1, k.dim(2), k.dim(3)),
                              -1.0));
        into(n.inputs[1], sonetlab::scale(sonetlab::conv2d(k, g, n.attr0, n.attr1), -1.0));
        break;
      }
      case Node::Op::kActivation: {
        const Tensor& x = value(n.inputs[0]);
        Tensor gx(x.shape());
        for (std::int64_t i = 0; i < x.size(); ++i) {
          gx[i] = g[i] * activate_derivative(n.act, x[i]);
        }
        into(n.inputs[0], gx);
        break;
      }
      case Node::Op::kBatchNormAffine: {
        const Tensor& x = value(n.inputs[0]);
        const Tensor& gamma = value(n.inputs[1]);
        const int c = x.dim(0);
        const std::int64_t plane = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
        Tensor gx(x.shape()), ggamma({c}), gbeta({c});
        for (int ch = 0; ch < c; ++ch) {
          const double s = gamma[ch] * n.aux_inv_std[ch];
          const double m = n.aux_mean[ch];
          const double istd = n.aux_inv_std[ch];
          const double* gi = g.data() + ch * plane;
          const double* xi = x.data() + ch * plane;
          double* gxi = gx.data() + ch * plane;
          double sg = 0.0, sb = 0.0;
          for (std::int64_t i = 0; i < plane; ++i) {
            gxi[i] = gi[i] * s;
            sg += gi[i] * (xi[i] - m) * istd;
            sb += gi[i];
          }
          ggamma[ch] = sg;
          gbeta[ch] = sb;
        }
        into(n.inputs[0], gx);
        into(n.inputs[1], ggamma);
        into(n.inputs[2], gbeta);
        break;
      }
      case Node::Op::kConcat: {
        const Tensor& a = value(n.inputs[0]);
        const Tensor& b = value(n.inputs[1]);
        Tensor ga(a.shape()), gb(b.shape());
        std::memcpy(ga.data(), g.data(), sizeof(double) * static_cast<std::size_t>(a.size()));
        std::memcpy(gb.data(), g.data() + a.size(),
                    sizeof(double) * static_cast<std::size_t>(b.size()));
        into(n.inputs[0], ga);
        into(n.inputs[1], gb);
        break;
      }
      case Node::Op::kSlice: {
        const Tensor& y = value(n.inputs[0]);
        Tensor gy(y.shape());
        for (std::int64_t i = 0; i < g.size(); ++i) gy[n.offset + i] = g[i];
        into(n.inputs[0], gy);
        break;
      }
      case Node::Op::kChannelCopy: {
        const Tensor& x = value(n.inputs[0]);
        const int c = x.dim(0);
        const std::int64_t plane = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
        Tensor gx(x.shape());
        for (int q = 0; q < c * n.attr0; ++q) {
          const double* gi = g.data() + q * plane;
          double* gxi = gx.data() + (q % c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) gxi[i] += gi[i];
        }
        into(n.inputs[0], gx);
        break;
      }
      case Node::Op::kAvgPool: {
        const Tensor& x = value(n.inputs[0]);
        const int c = x.dim(0);
        const std::int64_t plane = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
        const double inv = 1.0 / static_cast<double>(plane);
        Tensor gx(x.shape());
        for (int ch = 0; ch < c; ++ch) {
          const double v = g[ch] * inv;
          double* gxi = gx.data() + ch * plane;
          for (std::int64_t i = 0; i < plane; ++i) gxi[i] = v;
        }
        into(n.inputs[0], gx);
        break;
      }
      case Node::Op::kSum: {
        const Tensor& x = value(n.inputs[0]);
        into(n.inputs[0], Tensor::full(x.shape(), g.item()));
        break;
      }
      case Node::Op::kDot: {
        const double s = g.item();
        into(n.inputs[0], sonetlab::scale(value(n.inputs[1]), s));
        into(n.inputs[1], sonetlab::scale(value(n.inputs[0]), s));
        break;
      }
      case Node::Op::kCrossEntropy: {
        const Tensor p = softmax(value(n.inputs[0]));
        Tensor gl(p.shape());
        const double s = g.item();
        for (std::int64_t i = 0; i < p.size(); ++i) gl[i] = s * p[i];
        gl[n.attr0] -= s;
        into(n.inputs[0], gl);
        break;
      }
      case Node::Op::kKlConsistency: {
        // KL(p || q), p = softmax(nat), q = softmax(adv):
        //   d/d adv_i = q_i - p_i
        //   d/d nat_i = p_i * (log p_i - log q_i - KL)
        // log-softmax is recomputed stably; log(p_i) on raw probabilities
        // would underflow to -inf for saturated logits.
        const Tensor& ladv = value(n.inputs[0]);
        const Tensor& lnat = value(n.inputs[1]);
        const std::int64_t c = ladv.size();
        double madv = ladv[0], mnat = lnat[0];
        for (std::int64_t i = 1; i < c; ++i) {
          madv = std::max(madv, ladv[i]);
          mnat = std::max(mnat, lnat[i]);
        }
        double zadv = 0.0, znat = 0.0;
        for (std::int64_t i = 0; i < c; ++i) {
          zadv += std::exp(ladv[i] - madv);
          znat += std::exp(lnat[i] - mnat);
        }
        const double lzadv = std::log(zadv), lznat = std::log(znat);
        const double kl = n.value.item();
        const double s = g.item();
        Tensor gadv(ladv.shape()), gnat(lnat.shape());
        for (std::int64_t i = 0; i < c; ++i) {
          const double logp = lnat[i] - mnat - lznat;
          const double logq = ladv[i] - madv - lzadv;
          const double p = std::exp(logp);
          const double q = std::exp(logq);
          gadv[i] = s * (q - p);
          gnat[i] = s * p * (logp - logq - kl);
        }
        into(n.inputs[0], gadv);
        into(n.inputs[1], gnat);
        break;
      }
      case Node::Op::kCwMargin: {
        const Tensor& logits = value(n.inputs[0]);
        int best = -1;
        for (std::int64_t i = 0; i < logits.size(); ++i) {
          if (static_cast<int>(i) == n.attr0) continue;
          if (best < 0 || logits[i] > logits[best]) best = static_cast<int>(i);
        }
        Tensor gl(logits.shape());
        const double s = g.item();
        gl[n.attr0] += s;
        gl[best] -= s;
        into(n.inputs[0], gl);
        break;
      }
    }
    // Free this adjoint early unless the caller needs it (leaves are kept).
    if (n.op != Node::Op::kLeaf) g = Tensor();
  }

  GradientMap result;
  for (NodeId id = 0; id < static_cast<NodeId>(nodes_.size()); ++id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.op != Node::Op::kLeaf) continue;
    Tensor& g = adj[static_cast<std::size_t>(id)];
    result.put(id, g.defined() ? std::move(g) : Tensor(n.value.shape()));
  }
  return result;
}

}  // namespace sonetlab
