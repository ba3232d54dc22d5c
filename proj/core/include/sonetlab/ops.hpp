#pragma once

#include "sonetlab/tensor.hpp"

namespace sonetlab {

// Value-level kernels shared by the tape (forward + backward rules) and by
// gradient-free code paths. All convolutions are cross-correlations with
// zero padding; kernels are laid out {c_out, c_in, k, k}, images {c, h, w}.

Tensor matvec(const Tensor& W, const Tensor& x);            // {m,n} x {n} -> {m}
Tensor matvec_transpose(const Tensor& W, const Tensor& z);  // {m,n} x {m} -> {n}
Tensor outer(const Tensor& a, const Tensor& b);             // {m} x {n} -> {m,n}

Tensor conv2d(const Tensor& K, const Tensor& x, int stride, int pad);

// Adjoint of conv2d with respect to the image: for all K, x, g
//   <conv2d(K, x), g> == <x, conv2d_adjoint_input(K, g, ...)>  .
// h_in/w_in disambiguate the input size when stride > 1.
Tensor conv2d_adjoint_input(const Tensor& K, const Tensor& g, int stride, int pad,
                            int h_in, int w_in);

// Adjoint with respect to the kernel: d<conv2d(K,x), g>/dK.
Tensor conv2d_adjoint_kernel(const Tensor& x, const Tensor& g, int stride, int pad,
                             int kh, int kw);

// Output spatial extent of a convolution along one axis.
int conv_out_extent(int in, int k, int stride, int pad);

Tensor softmax(const Tensor& logits);
double cross_entropy_logits_value(const Tensor& logits, int label);
// KL(softmax(logits_nat) || softmax(logits_adv)), always >= 0.
double kl_consistency_value(const Tensor& logits_adv, const Tensor& logits_nat);
// True-class logit minus best other logit; negative means misclassified.
double cw_margin_value(const Tensor& logits, int label);
// Argmax with ties broken toward the lowest index.
int argmax_lowest(const Tensor& v);

}  // namespace sonetlab
