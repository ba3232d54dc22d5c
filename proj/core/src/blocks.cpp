#include "sonetlab/blocks.hpp"

#include <cmath>

#include "sonetlab/errors.hpp"
#include "sonetlab/ops.hpp"

namespace sonetlab::blocks {

namespace {

// W x for dense kernels, K (*) x for conv kernels (stride 1 inside blocks).
NodeId apply_kernel(Tape& tape, NodeId kernel, NodeId x, bool conv, int pad) {
  return conv ? tape.conv2d(kernel, x, 1, pad) : tape.linear(kernel, x);
}

// -W^T z / negated transposed convolution, sharing the kernel node.
NodeId apply_kernel_neg_transpose(Tape& tape, NodeId kernel, NodeId z, bool conv, int pad) {
  return conv ? tape.conv2d_neg_transpose(kernel, z, 1, pad) : tape.linear_neg_transpose(kernel, z);
}

std::vector<int> kernel_output_shape(const Tensor& kernel, bool conv,
                                     const std::vector<int>& x_shape) {
  if (conv) {
    if (x_shape.size() != 3) throw ContractViolation("skew block: conv input must be {c,h,w}");
    return {kernel.shape()[0], x_shape[1], x_shape[2]};
  }
  return {kernel.shape()[0]};
}

}  // namespace

JointLayout joint_layout(const Tensor& kernel, bool conv, const std::vector<int>& x_shape) {
  JointLayout l;
  l.x_shape = x_shape;
  l.z_shape = kernel_output_shape(kernel, conv, x_shape);
  l.x_size = 1;
  for (int d : l.x_shape) l.x_size *= d;
  l.z_size = 1;
  for (int d : l.z_shape) l.z_size *= d;
  return l;
}

std::pair<Tensor, Tensor> skew_field_eval(const SkewOdeBlockParams& p, const Tensor& x,
                                          const Tensor& z) {
  Tensor wx = p.conv ? conv2d(p.kernel, x, 1, p.pad) : matvec(p.kernel, x);
  require_same_shape(wx, z, "skew_field_eval");
  Tensor pre_z = axpy(-p.gamma, z, wx);
  Tensor wtz = p.conv ? scale(conv2d_adjoint_input(p.kernel, z, 1, p.pad, x.dim(1), x.dim(2)), -1.0)
                      : scale(matvec_transpose(p.kernel, z), -1.0);
  Tensor pre_x = axpy(-p.gamma, x, wtz);
  Tensor dz(pre_z.shape()), dx(pre_x.shape());
  for (std::int64_t i = 0; i < pre_z.size(); ++i) dz[i] = activate(p.activation, pre_z[i]);
  for (std::int64_t i = 0; i < pre_x.size(); ++i) dx[i] = activate(p.activation, pre_x[i]);
  return {dx, dz};
}

solvers::TapeField make_skew_tape_field(const SkewOdeBlockParams& meta, NodeId kernel_node,
                                        JointLayout layout) {
  return [meta, kernel_node, layout](Tape& tape, double /*t*/, NodeId y) -> NodeId {
    NodeId xs = tape.slice(y, 0, layout.x_shape);
    NodeId zs = tape.slice(y, layout.x_size, layout.z_shape);
    NodeId wx = apply_kernel(tape, kernel_node, xs, meta.conv, meta.pad);
    NodeId pre_z = meta.gamma != 0.0 ? tape.add_scaled(wx, -meta.gamma, zs) : wx;
    NodeId dz = tape.activation(meta.activation, pre_z);
    NodeId wtz = apply_kernel_neg_transpose(tape, kernel_node, zs, meta.conv, meta.pad);
    NodeId pre_x = meta.gamma != 0.0 ? tape.add_scaled(wtz, -meta.gamma, xs) : wtz;
    NodeId dx = tape.activation(meta.activation, pre_x);
    return tape.concat(dx, dz);
  };
}

solvers::ValueField make_skew_value_field(const SkewOdeBlockParams& p, JointLayout layout) {
  return [p, layout](double /*t*/, const Tensor& y) -> Tensor {
    Tensor x(layout.x_shape), z(layout.z_shape);
    for (std::int64_t i = 0; i < layout.x_size; ++i) x[i] = y[i];
    for (std::int64_t i = 0; i < layout.z_size; ++i) z[i] = y[layout.x_size + i];
    auto [dx, dz] = skew_field_eval(p, x, z);
    Tensor out({static_cast<int>(layout.x_size + layout.z_size)});
    for (std::int64_t i = 0; i < layout.x_size; ++i) out[i] = dx[i];
    for (std::int64_t i = 0; i < layout.z_size; ++i) out[layout.x_size + i] = dz[i];
    return out;
  };
}

NodeId ode_block_forward(Tape& tape, const SkewOdeBlockParams& meta, NodeId kernel_node,
                         NodeId x_k, const solvers::SolverConfig& solver,
                         solvers::StepTrace* trace) {
  const Tensor& kernel = tape.value(kernel_node);
  const JointLayout layout = joint_layout(kernel, meta.conv, tape.value(x_k).shape());

  NodeId z0 = kNoNode;
  if (meta.block_kind == BlockKind::feature) {
    if (layout.x_shape != layout.z_shape) {
      throw ContractViolation("feature ODE block requires matching x/z shapes (z0 = x0)");
    }
    z0 = x_k;
  } else {
    z0 = tape.leaf(Tensor::full(layout.z_shape, 1.0));  // no prior on the true label
  }

  if (solver.method == solvers::Method::euler_sequential) {
    SequentialOutcome seq = euler_sequential_integrate(tape, meta, kernel_node, x_k, z0, solver.h);
    if (trace) *trace = std::move(seq.trace);
    return seq.z1;
  }

  NodeId joint0 = tape.concat(x_k, z0);
  auto field = make_skew_tape_field(meta, kernel_node, layout);
  solvers::TapeOutcome out = solvers::integrate(tape, field, joint0, 0.0, meta.t_end, solver);
  if (trace) *trace = std::move(out.trace);
  return tape.slice(out.y1, layout.x_size, layout.z_shape);
}

Tensor ode_block_forward(const SkewOdeBlockParams& p, const Tensor& x_k,
                         const solvers::SolverConfig& solver, solvers::StepTrace* trace) {
  Tape tape;
  NodeId kernel = tape.leaf(p.kernel);
  NodeId x = tape.leaf(x_k);
  NodeId z = ode_block_forward(tape, p, kernel, x, solver, trace);
  return tape.value(z);
}

SequentialOutcome euler_sequential_integrate(Tape& tape, const SkewOdeBlockParams& meta,
                                             NodeId kernel_node, NodeId x0, NodeId z0,
                                             double h) {
  if (!(h > 0.0)) throw ContractViolation("euler_sequential: h must be positive");
  SequentialOutcome out;
  const double t_end = meta.t_end;
  const long steps = std::max<long>(1, static_cast<long>(std::ceil(t_end / h - 1e-9)));
  out.trace.accepted_times.push_back(0.0);
  NodeId x = x0, z = z0;
  double t = 0.0;
  for (long s = 0; s < steps; ++s) {
    const bool last = (s == steps - 1);
    const double t_next = last ? t_end : static_cast<double>(s + 1) * h;
    const double hs = t_next - t;
    // z first...
    NodeId wx = apply_kernel(tape, kernel_node, x, meta.conv, meta.pad);
    NodeId pre_z = meta.gamma != 0.0 ? tape.add_scaled(wx, -meta.gamma, z) : wx;
    z = tape.add_scaled(z, hs, tape.activation(meta.activation, pre_z));
    // ...then x from the freshly updated z
    NodeId wtz = apply_kernel_neg_transpose(tape, kernel_node, z, meta.conv, meta.pad);
    NodeId pre_x = meta.gamma != 0.0 ? tape.add_scaled(wtz, -meta.gamma, x) : wtz;
    x = tape.add_scaled(x, hs, tape.activation(meta.activation, pre_x));
    out.trace.rhs_evaluations += 1;
    t = t_next;
    out.trace.accepted_times.push_back(t);
    if (!all_finite(tape.value(x)) || !all_finite(tape.value(z))) {
      throw solvers::SolverDivergence("euler_sequential: state diverged", out.trace);
    }
  }
  out.x1 = x;
  out.z1 = z;
  return out;
}

ResnetPair resnet_block_forward(Tape& tape, NodeId w1, NodeId w2, NodeId x, ActivationKind act,
                                bool conv, int pad) {
  ResnetPair out;
  out.z1 = tape.activation(act, apply_kernel(tape, w1, x, conv, pad));
  NodeId w2z = conv ? tape.conv2d(w2, out.z1, 1, pad) : tape.linear(w2, out.z1);
  out.x1 = tape.add(x, tape.activation(act, w2z));
  return out;
}

NodeId odenet_block_forward(Tape& tape, NodeId w1, NodeId w2, NodeId x, ActivationKind act,
                            bool conv, int pad, const solvers::SolverConfig& solver,
                            solvers::StepTrace* trace) {
  if (solver.method == solvers::Method::euler_sequential) {
    throw ContractViolation("odenet block has no sequential scheme");
  }
  const std::vector<int> x_shape = tape.value(x).shape();
  auto field = [w1, w2, act, conv, pad, x_shape](Tape& t, double, NodeId y) -> NodeId {
    NodeId inner = t.activation(act, conv ? t.conv2d(w1, y, 1, pad) : t.linear(w1, y));
    NodeId outer_pre = conv ? t.conv2d(w2, inner, 1, pad) : t.linear(w2, inner);
    NodeId dy = t.activation(act, outer_pre);
    if (t.value(dy).shape() != x_shape) {
      throw ContractViolation("odenet block requires equal input/output dimensions");
    }
    return dy;
  };
  solvers::TapeOutcome out = solvers::integrate(tape, field, x, 0.0, 1.0, solver);
  if (trace) *trace = std::move(out.trace);
  return out.y1;
}

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

std::string to_string(Architecture a) {
  switch (a) {
    case Architecture::sonet:
      return "sonet";
    case Architecture::soblock:
      return "soblock";
    case Architecture::resnet10:
      return "resnet10";
    case Architecture::odenet:
      return "odenet";
  }
  throw InternalError("unknown architecture");
}

Architecture architecture_from_string(const std::string& name) {
  if (name == "sonet") return Architecture::sonet;
  if (name == "soblock") return Architecture::soblock;
  if (name == "resnet10") return Architecture::resnet10;
  if (name == "odenet") return Architecture::odenet;
  throw ContractViolation("unknown architecture: " + name);
}

void BnStats::merge(const BnStats& other) {
  if (sum.empty()) {
    *this = other;
    return;
  }
  for (std::size_t i = 0; i < sum.size(); ++i) {
    accumulate(sum[i], other.sum[i]);
    accumulate(sumsq[i], other.sumsq[i]);
    count[i] += other.count[i];
  }
}

namespace {

Tensor init_kernel(std::vector<int> shape, double fan_in_gain, Rng& rng) {
  Tensor t(std::move(shape));
  std::int64_t fan_in = 1;
  for (std::size_t i = 1; i < t.shape().size(); ++i) fan_in *= t.shape()[i];
  const double std_dev = std::sqrt(fan_in_gain / static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = std_dev * rng.normal();
  return t;
}

}  // namespace

Model assemble_network(const NetworkSpec& spec, Rng& rng) {
  Model m;
  m.spec = spec;

  auto add_param = [&m](const std::string& name, Tensor value) -> int {
    m.params.push_back({name, std::move(value)});
    return static_cast<int>(m.params.size() - 1);
  };
  auto add_bn = [&](const std::string& name, int channels) -> int {
    BnLayer layer;
    layer.name = name;
    layer.gamma_param = add_param(name + ".gamma", Tensor::full({channels}, 1.0));
    layer.beta_param = add_param(name + ".beta", Tensor({channels}));
    layer.running_mean = Tensor({channels});
    layer.running_var = Tensor::full({channels}, 1.0);
    m.bn.push_back(std::move(layer));
    return static_cast<int>(m.bn.size() - 1);
  };

  const int classes = spec.num_classes;
  if (classes < 2) throw ContractViolation("assemble_network: need at least 2 classes");

  if (spec.dense) {
    if (spec.architecture != Architecture::sonet) {
      throw ContractViolation("dense variant exists only for sonet");
    }
    std::int64_t n = 1;
    for (int d : spec.input_shape) n *= d;
    const int width = static_cast<int>(n);
    for (int l = 0; l < spec.layers; ++l) {
      m.layout.sonet_kernels.push_back(
          add_param("ode" + std::to_string(l) + ".kernel", init_kernel({width, width}, 1.0, rng)));
    }
    m.layout.cls_kernel = add_param("cls.kernel", init_kernel({classes, width}, 1.0, rng));
    return m;
  }

  if (spec.input_shape.size() != 3) {
    throw ContractViolation("assemble_network: image input must be {c,h,w}");
  }
  const int c_in = spec.input_shape[0];
  const int c0 = spec.channels;
  if (c0 < 1) throw ContractViolation("assemble_network: channels must be >= 1");

  if (spec.architecture == Architecture::sonet) {
    m.layout.channel_copy_factor = (c0 + c_in - 1) / c_in;  // tile then truncate
    for (int l = 0; l < spec.layers; ++l) {
      m.layout.sonet_kernels.push_back(add_param("ode" + std::to_string(l) + ".kernel",
                                                 init_kernel({c0, c0, 3, 3}, 1.0, rng)));
    }
    m.layout.cls_kernel = add_param("cls.kernel", init_kernel({classes, c0}, 1.0, rng));
    return m;
  }

  // resnet10 family: entry layer, four basic blocks with stage widths
  // {C, 2C, 4C, 8C} and strides {1, 2, 2, 2}, average pooling, fully
  // connected classifier.
  switch (spec.architecture) {
    case Architecture::resnet10:
      m.layout.first_conv = add_param("conv1", init_kernel({c0, c_in, 3, 3}, 2.0, rng));
      break;
    case Architecture::soblock:
      m.layout.channel_copy_factor = (c0 + c_in - 1) / c_in;
      m.layout.first_skew_kernel = add_param("ode0.kernel", init_kernel({c0, c0, 3, 3}, 1.0, rng));
      break;
    case Architecture::odenet:
      m.layout.channel_copy_factor = (c0 + c_in - 1) / c_in;
      m.layout.first_eq2_w1 = add_param("ode0.w1", init_kernel({c0, c0, 3, 3}, 1.0, rng));
      m.layout.first_eq2_w2 = add_param("ode0.w2", init_kernel({c0, c0, 3, 3}, 1.0, rng));
      break;
    case Architecture::sonet:
      break;  // handled above
  }
  m.layout.first_bn = add_bn("bn1", c0);

  int in_ch = c0;
  const int widths[4] = {c0, 2 * c0, 4 * c0, 8 * c0};
  const int strides[4] = {1, 2, 2, 2};
  for (int s = 0; s < 4; ++s) {
    Model::BasicBlockLayout bb;
    const std::string base = "stage" + std::to_string(s + 1);
    bb.conv1.param = add_param(base + ".conv1", init_kernel({widths[s], in_ch, 3, 3}, 2.0, rng));
    bb.conv1.stride = strides[s];
    bb.conv1.pad = 1;
    bb.bn1 = add_bn(base + ".bn1", widths[s]);
    bb.conv2.param = add_param(base + ".conv2", init_kernel({widths[s], widths[s], 3, 3}, 2.0, rng));
    bb.conv2.stride = 1;
    bb.conv2.pad = 1;
    bb.bn2 = add_bn(base + ".bn2", widths[s]);
    if (strides[s] != 1 || in_ch != widths[s]) {
      bb.has_projection = true;
      bb.proj.param = add_param(base + ".proj", init_kernel({widths[s], in_ch, 1, 1}, 2.0, rng));
      bb.proj.stride = strides[s];
      bb.proj.pad = 0;
      bb.bn_proj = add_bn(base + ".bn_proj", widths[s]);
    }
    m.layout.blocks.push_back(bb);
    in_ch = widths[s];
  }
  m.layout.fc_w = add_param("fc.weight", init_kernel({classes, in_ch}, 1.0, rng));
  m.layout.fc_b = add_param("fc.bias", Tensor({classes}));
  return m;
}

Model::Binding Model::bind(Tape& tape) const {
  Binding b;
  b.nodes.reserve(params.size());
  for (const Parameter& p : params) b.nodes.push_back(tape.leaf(p.value));
  return b;
}

NodeId Model::batchnorm(Tape& tape, const Binding& b, int bn_index, NodeId x,
                        const ForwardOptions& opts) const {
  const BnLayer& layer = bn[static_cast<std::size_t>(bn_index)];
  if (opts.bn_stats) {
    const Tensor& v = tape.value(x);
    const int c = v.dim(0);
    const std::int64_t plane = static_cast<std::int64_t>(v.dim(1)) * v.dim(2);
    Tensor s({c}), s2({c});
    for (int ch = 0; ch < c; ++ch) {
      double a = 0.0, a2 = 0.0;
      const double* p = v.data() + ch * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        a += p[i];
        a2 += p[i] * p[i];
      }
      s[ch] = a;
      s2[ch] = a2;
    }
    accumulate(opts.bn_stats->sum[static_cast<std::size_t>(bn_index)], s);
    accumulate(opts.bn_stats->sumsq[static_cast<std::size_t>(bn_index)], s2);
    opts.bn_stats->count[static_cast<std::size_t>(bn_index)] += plane;
  }
  return tape.batchnorm_affine(x, b.nodes[static_cast<std::size_t>(layer.gamma_param)],
                               b.nodes[static_cast<std::size_t>(layer.beta_param)],
                               layer.running_mean, layer.running_var, layer.eps);
}

NodeId Model::trunk_after_entry(Tape& tape, const Binding& b, NodeId h,
                                const ForwardOptions& opts) const {
  for (const BasicBlockLayout& bb : layout.blocks) {
    NodeId main = tape.conv2d(b.nodes[static_cast<std::size_t>(bb.conv1.param)], h,
                              bb.conv1.stride, bb.conv1.pad);
    main = batchnorm(tape, b, bb.bn1, main, opts);
    main = tape.activation(ActivationKind::relu, main);
    main = tape.conv2d(b.nodes[static_cast<std::size_t>(bb.conv2.param)], main, bb.conv2.stride,
                       bb.conv2.pad);
    main = batchnorm(tape, b, bb.bn2, main, opts);
    NodeId shortcut = h;
    if (bb.has_projection) {
      shortcut = tape.conv2d(b.nodes[static_cast<std::size_t>(bb.proj.param)], h, bb.proj.stride,
                             bb.proj.pad);
      shortcut = batchnorm(tape, b, bb.bn_proj, shortcut, opts);
    }
    h = tape.activation(ActivationKind::relu, tape.add(main, shortcut));
  }
  NodeId pooled = tape.avg_pool(h);
  NodeId logits = tape.linear(b.nodes[static_cast<std::size_t>(layout.fc_w)], pooled);
  return tape.add(logits, b.nodes[static_cast<std::size_t>(layout.fc_b)]);
}

NodeId Model::logits(Tape& tape, const Binding& b, NodeId input,
                     const ForwardOptions& opts) const {
  SkewOdeBlockParams meta;
  meta.gamma = spec.gamma;
  meta.t_end = spec.t_end;
  meta.activation = spec.ode_activation;

  auto widen = [&](NodeId x) -> NodeId {
    NodeId wide = tape.channel_copy(x, layout.channel_copy_factor);
    const Tensor& v = tape.value(wide);
    if (v.dim(0) != spec.channels) {
      return tape.slice(wide, 0, {spec.channels, v.dim(1), v.dim(2)});
    }
    return wide;
  };
  auto run_trace = [&](auto&& fn) {
    solvers::StepTrace trace;
    NodeId out = fn(opts.traces ? &trace : nullptr);
    if (opts.traces) opts.traces->push_back(std::move(trace));
    return out;
  };

  if (spec.dense) {
    std::int64_t n = tape.value(input).size();
    NodeId h = tape.slice(input, 0, {static_cast<int>(n)});  // flatten
    meta.conv = false;
    meta.block_kind = BlockKind::feature;
    for (int kernel_param : layout.sonet_kernels) {
      NodeId kp = b.nodes[static_cast<std::size_t>(kernel_param)];
      h = run_trace([&](solvers::StepTrace* tr) {
        return ode_block_forward(tape, meta, kp, h, spec.solver, tr);
      });
    }
    meta.block_kind = BlockKind::classification;
    NodeId ck = b.nodes[static_cast<std::size_t>(layout.cls_kernel)];
    return run_trace([&](solvers::StepTrace* tr) {
      return ode_block_forward(tape, meta, ck, h, spec.solver, tr);
    });
  }

  switch (spec.architecture) {
    case Architecture::sonet: {
      NodeId h = widen(input);
      meta.conv = true;
      meta.pad = 1;
      meta.block_kind = BlockKind::feature;
      for (int kernel_param : layout.sonet_kernels) {
        NodeId kp = b.nodes[static_cast<std::size_t>(kernel_param)];
        h = run_trace([&](solvers::StepTrace* tr) {
          return ode_block_forward(tape, meta, kp, h, spec.solver, tr);
        });
      }
      NodeId pooled = tape.avg_pool(h);
      meta.conv = false;
      meta.block_kind = BlockKind::classification;
      NodeId ck = b.nodes[static_cast<std::size_t>(layout.cls_kernel)];
      return run_trace([&](solvers::StepTrace* tr) {
        return ode_block_forward(tape, meta, ck, pooled, spec.solver, tr);
      });
    }
    case Architecture::soblock: {
      NodeId h = widen(input);
      meta.conv = true;
      meta.pad = 1;
      meta.block_kind = BlockKind::feature;
      NodeId kp = b.nodes[static_cast<std::size_t>(layout.first_skew_kernel)];
      h = run_trace([&](solvers::StepTrace* tr) {
        return ode_block_forward(tape, meta, kp, h, spec.solver, tr);
      });
      h = batchnorm(tape, b, layout.first_bn, h, opts);
      h = tape.activation(ActivationKind::relu, h);
      return trunk_after_entry(tape, b, h, opts);
    }
    case Architecture::odenet: {
      NodeId h = widen(input);
      NodeId w1 = b.nodes[static_cast<std::size_t>(layout.first_eq2_w1)];
      NodeId w2 = b.nodes[static_cast<std::size_t>(layout.first_eq2_w2)];
      h = run_trace([&](solvers::StepTrace* tr) {
        return odenet_block_forward(tape, w1, w2, h, spec.ode_activation, true, 1, spec.solver,
                                    tr);
      });
      h = batchnorm(tape, b, layout.first_bn, h, opts);
      h = tape.activation(ActivationKind::relu, h);
      return trunk_after_entry(tape, b, h, opts);
    }
    case Architecture::resnet10: {
      NodeId h = tape.conv2d(b.nodes[static_cast<std::size_t>(layout.first_conv)], input, 1, 1);
      h = batchnorm(tape, b, layout.first_bn, h, opts);
      h = tape.activation(ActivationKind::relu, h);
      return trunk_after_entry(tape, b, h, opts);
    }
  }
  throw InternalError("unknown architecture");
}

Tensor Model::logits_value(const Tensor& input, const ForwardOptions& opts) const {
  Tape tape;
  Binding b = bind(tape);
  NodeId out = logits(tape, b, tape.leaf(input), opts);
  return tape.value(out);
}

int Model::predict(const Tensor& input) const { return argmax_lowest(logits_value(input)); }

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const Parameter& p : params) n += p.value.size();
  return n;
}

BnStats Model::make_bn_stats() const {
  BnStats s;
  s.sum.resize(bn.size());
  s.sumsq.resize(bn.size());
  s.count.assign(bn.size(), 0);
  for (std::size_t i = 0; i < bn.size(); ++i) {
    const int c = static_cast<int>(bn[i].running_mean.size());
    s.sum[i] = Tensor({c});
    s.sumsq[i] = Tensor({c});
  }
  return s;
}

void Model::update_bn_running(const BnStats& stats) {
  for (std::size_t i = 0; i < bn.size(); ++i) {
    if (stats.count[i] == 0) continue;
    BnLayer& layer = bn[i];
    const double inv = 1.0 / static_cast<double>(stats.count[i]);
    for (std::int64_t c = 0; c < layer.running_mean.size(); ++c) {
      const double mean = stats.sum[i][c] * inv;
      const double var = std::max(0.0, stats.sumsq[i][c] * inv - mean * mean);
      layer.running_mean[c] = layer.momentum * layer.running_mean[c] + (1.0 - layer.momentum) * mean;
      layer.running_var[c] = layer.momentum * layer.running_var[c] + (1.0 - layer.momentum) * var;
    }
  }
}

}  // namespace sonetlab::blocks
