#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "sonetlab/activation.hpp"
#include "sonetlab/tensor.hpp"

namespace sonetlab {

using NodeId = std::int32_t;
inline constexpr NodeId kNoNode = -1;

// Reverse-mode gradients, keyed by the tape node they belong to. Leaves that
// the output does not depend on map to zero tensors of the leaf's shape.
class GradientMap {
 public:
  const Tensor& at(NodeId id) const;
  bool contains(NodeId id) const { return grads_.count(id) != 0; }
  void put(NodeId id, Tensor g) { grads_[id] = std::move(g); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::unordered_map<NodeId, Tensor> grads_;
};

// Append-only record of a forward computation: every node stores its
// operation, input node ids and the produced value, in topological order.
// Replaying the sequence reproduces the recorded values bit-identically;
// walking it backwards accumulates exact reverse-mode gradients.
class ComputationTape {
 public:
  struct Node {
    enum class Op : std::uint8_t {
      kLeaf,
      kLincomb,        // sum_i coeffs[i] * in_i, identical shapes
      kLinear,         // W x
      kLinearNegT,     // -W^T z, same W buffer as kLinear
      kConv2d,         // K (*) x
      kConv2dNegT,     // negated adjoint of kConv2d, same K buffer
      kActivation,     // elementwise sigma
      kBatchNormAffine,// (x - mean) * inv_std * gamma + beta, frozen stats
      kConcat,         // flat [a; b]
      kSlice,          // flat range -> shape
      kChannelCopy,    // channel axis tiled `factor` times
      kAvgPool,        // {c,h,w} -> {c} spatial mean
      kSum,            // scalar sum over all elements
      kDot,            // scalar <a, b>
      kCrossEntropy,   // -log softmax(logits)[label]
      kKlConsistency,  // KL(softmax(nat) || softmax(adv))
      kCwMargin,       // logits[label] - max_{j != label} logits[j]
    };

    Op op = Op::kLeaf;
    ActivationKind act = ActivationKind::identity;
    std::vector<NodeId> inputs;
    std::vector<double> coeffs;  // kLincomb only
    int attr0 = 0;               // stride | label | factor
    int attr1 = 0;               // pad
    std::int64_t offset = 0;     // kSlice
    Tensor aux_mean, aux_inv_std;  // kBatchNormAffine frozen statistics
    Tensor value;
  };

  NodeId leaf(Tensor value);

  NodeId lincomb(std::span<const NodeId> inputs, std::span<const double> coeffs);
  NodeId add(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId add_scaled(NodeId a, double c, NodeId b);  // a + c*b

  NodeId linear(NodeId w, NodeId x);
  NodeId linear_neg_transpose(NodeId w, NodeId z);
  NodeId conv2d(NodeId k, NodeId x, int stride, int pad);
  NodeId conv2d_neg_transpose(NodeId k, NodeId z, int stride, int pad);
  NodeId activation(ActivationKind kind, NodeId x);
  NodeId batchnorm_affine(NodeId x, NodeId gamma, NodeId beta, const Tensor& mean,
                          const Tensor& var, double eps);
  NodeId concat(NodeId a, NodeId b);
  NodeId slice(NodeId y, std::int64_t offset, std::vector<int> shape);
  NodeId channel_copy(NodeId x, int factor);
  NodeId avg_pool(NodeId x);
  NodeId sum(NodeId x);
  NodeId dot(NodeId a, NodeId b);
  NodeId cross_entropy(NodeId logits, int label);
  NodeId kl_consistency(NodeId logits_adv, NodeId logits_nat);
  NodeId cw_margin(NodeId logits, int label);

  const Tensor& value(NodeId id) const;
  std::size_t size() const { return nodes_.size(); }
  bool is_leaf(NodeId id) const;
  void clear();

  // Reverse sweep from `output` seeded with `seed` (shape must match the
  // output value). Returns gradients for every leaf on the tape.
  GradientMap backprop(NodeId output, const Tensor& seed) const;

  // Recomputes every non-leaf value from the leaves; throws InternalError if
  // any value fails to reproduce bit-identically.
  void replay_check() const;

 private:
  NodeId push(Node n);
  const Node& node(NodeId id) const;
  Tensor eval(const Node& n) const;  // recompute a node's value from inputs

  std::vector<Node> nodes_;
};

// The module's public name for the recorded-graph type.
using Tape = ComputationTape;

}  // namespace sonetlab
