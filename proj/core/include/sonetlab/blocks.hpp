#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sonetlab/activation.hpp"
#include "sonetlab/rng.hpp"
#include "sonetlab/solvers.hpp"
#include "sonetlab/tape.hpp"
#include "sonetlab/tensor.hpp"

namespace sonetlab::blocks {

enum class BlockKind { feature, classification };

// One stabilized skew-symmetric ODE block:
//   dz/dt = sigma(W x - gamma z),  dx/dt = sigma(-W^T z - gamma x),
// with a single kernel W shared by both branches. The output of the block is
// z(t_end). Feature blocks start z at the block input; classification blocks
// start z at all-ones.
struct SkewOdeBlockParams {
  Tensor kernel;  // {m,n} dense or {co,ci,k,k} conv; the one shared buffer
  double gamma = 0.0;
  double t_end = 1.0;
  ActivationKind activation = ActivationKind::elu;
  BlockKind block_kind = BlockKind::feature;
  bool conv = false;
  int pad = 1;  // conv only; stride is fixed to 1 along a trajectory

  // Theorem hypothesis: strict damping and strictly increasing activation.
  bool theorem_eligible() const { return gamma > 0.0 && strictly_increasing(activation); }
};

// Shapes of x and z and their flat extents inside the joint state [x; z].
struct JointLayout {
  std::vector<int> x_shape, z_shape;
  std::int64_t x_size = 0, z_size = 0;
};
JointLayout joint_layout(const Tensor& kernel, bool conv, const std::vector<int>& x_shape);

// Field evaluation at a point (no tape): returns (dx, dz).
std::pair<Tensor, Tensor> skew_field_eval(const SkewOdeBlockParams& p, const Tensor& x,
                                          const Tensor& z);

// The joint field on concat(x, z) for the generic integrators. The kernel is
// the tape node `kernel_node`; both branches reference that single node, so
// gradient contributions from the W and -W^T paths accumulate into one buffer.
solvers::TapeField make_skew_tape_field(const SkewOdeBlockParams& meta, NodeId kernel_node,
                                        JointLayout layout);
solvers::ValueField make_skew_value_field(const SkewOdeBlockParams& p, JointLayout layout);

// Block forward on the tape; returns z(t_end). `meta.kernel` is not consulted;
// the kernel buffer lives at kernel_node.
NodeId ode_block_forward(Tape& tape, const SkewOdeBlockParams& meta, NodeId kernel_node,
                         NodeId x_k, const solvers::SolverConfig& solver,
                         solvers::StepTrace* trace = nullptr);

// Value-level convenience (runs on a scratch tape).
Tensor ode_block_forward(const SkewOdeBlockParams& p, const Tensor& x_k,
                         const solvers::SolverConfig& solver,
                         solvers::StepTrace* trace = nullptr);

// Gauss-Seidel Euler on the pair: z steps first, then x using the new z.
// With h = 1, gamma = 0 this reproduces the residual block exactly.
struct SequentialOutcome {
  NodeId x1 = kNoNode, z1 = kNoNode;
  solvers::StepTrace trace;
};
SequentialOutcome euler_sequential_integrate(Tape& tape, const SkewOdeBlockParams& meta,
                                             NodeId kernel_node, NodeId x0, NodeId z0,
                                             double h);

// Residual pair (unit time step, z_k = 0): z1 = sigma(W1 x), x1 = x + sigma(W2 z1).
struct ResnetPair {
  NodeId x1 = kNoNode, z1 = kNoNode;
};
ResnetPair resnet_block_forward(Tape& tape, NodeId w1, NodeId w2, NodeId x,
                                ActivationKind act, bool conv = false, int pad = 1);

// Plain neural-ODE block: dx/dt = sigma(W2 sigma(W1 x)); input and output
// dimensions must agree.
NodeId odenet_block_forward(Tape& tape, NodeId w1, NodeId w2, NodeId x, ActivationKind act,
                            bool conv, int pad, const solvers::SolverConfig& solver,
                            solvers::StepTrace* trace = nullptr);

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

enum class Architecture { sonet, soblock, resnet10, odenet };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& name);

struct NetworkSpec {
  Architecture architecture = Architecture::soblock;
  int channels = 32;  // base width; trunk stages use {C, 2C, 4C, 8C}
  int layers = 5;     // sonet feature-block count
  solvers::SolverConfig solver;
  int num_classes = 10;
  std::vector<int> input_shape;  // {c,h,w}; may be {n} for the dense sonet
  bool dense = false;            // fully-connected sonet variant
  ActivationKind ode_activation = ActivationKind::elu;
  double gamma = 0.0;
  double t_end = 1.0;
};

struct Parameter {
  std::string name;
  Tensor value;
};

struct BnLayer {
  std::string name;
  int gamma_param = -1, beta_param = -1;  // indices into Model::params
  Tensor running_mean, running_var;       // per-channel buffers
  double eps = 1e-5;
  double momentum = 0.9;
};

// Per-channel input statistics of every BN layer, accumulated over a batch.
struct BnStats {
  std::vector<Tensor> sum, sumsq;
  std::vector<std::int64_t> count;
  void merge(const BnStats& other);
};

struct ForwardOptions {
  std::vector<solvers::StepTrace>* traces = nullptr;  // appended per ODE block
  BnStats* bn_stats = nullptr;                        // captured when non-null
};

class Model {
 public:
  NetworkSpec spec;
  std::vector<Parameter> params;
  std::vector<BnLayer> bn;

  struct Binding {
    std::vector<NodeId> nodes;  // aligned with params
  };

  Binding bind(Tape& tape) const;
  NodeId logits(Tape& tape, const Binding& binding, NodeId input,
                const ForwardOptions& opts = {}) const;
  Tensor logits_value(const Tensor& input, const ForwardOptions& opts = {}) const;
  int predict(const Tensor& input) const;

  std::int64_t parameter_count() const;
  BnStats make_bn_stats() const;
  // running <- momentum * running + (1 - momentum) * batch statistic
  void update_bn_running(const BnStats& stats);

  // Structural description used by assembly and the checkpoint format.
  struct ConvSpec {
    int param = -1;
    int stride = 1, pad = 1;
  };
  struct BasicBlockLayout {
    ConvSpec conv1, conv2;
    int bn1 = -1, bn2 = -1;
    bool has_projection = false;
    ConvSpec proj;
    int bn_proj = -1;
  };
  struct Layout {
    int channel_copy_factor = 0;  // 0 = no widening layer
    int first_conv = -1;          // resnet10
    int first_skew_kernel = -1;   // soblock
    int first_eq2_w1 = -1, first_eq2_w2 = -1;  // odenet
    int first_bn = -1;
    std::vector<BasicBlockLayout> blocks;
    int fc_w = -1, fc_b = -1;
    std::vector<int> sonet_kernels;
    int cls_kernel = -1;
  };
  Layout layout;

 private:
  NodeId trunk_after_entry(Tape& tape, const Binding& b, NodeId h,
                           const ForwardOptions& opts) const;
  NodeId batchnorm(Tape& tape, const Binding& b, int bn_index, NodeId x,
                   const ForwardOptions& opts) const;
};

// Builds a model per the spec: sonet stacks channel-copy, L feature ODE
// blocks, average pooling and a classification ODE block; soblock is resnet10
// with only its first convolution replaced by a feature ODE block; odenet
// replaces the same convolution by the two-kernel block instead.
Model assemble_network(const NetworkSpec& spec, Rng& init_rng);

}  // namespace sonetlab::blocks
