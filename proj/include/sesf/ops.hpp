#pragma once

#include <functional>
#include <optional>

#include "sesf/tensor.hpp"

namespace sesf {

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Multiply by a compile-time constant scalar.
Tensor scale(const Tensor& a, double s);
// Adds rank-1 bias along `axis` of x.
Tensor add_bias(const Tensor& x, const Tensor& bias, std::size_t axis);

// Rank-2 matrix product [m,k] x [k,n] -> [m,n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Batched graph contractions on feature maps X[B,C,V,T].
// Full adjacency A[V*T, V*T] applied over the flattened (v,t) axis.
Tensor full_adjacency_apply(const Tensor& adjacency, const Tensor& x);
// Per-frame joint mixing: out[b,c,v,t] = sum_u A[v,u,t] * x[b,c,u,t], A[V,V,T].
Tensor contract_spatial(const Tensor& adjacency, const Tensor& x);
// Per-joint frame mixing: out[b,c,v,t] = sum_s A[t,s,v] * x[b,c,v,s], A[T,T,V].
Tensor contract_temporal(const Tensor& adjacency, const Tensor& x);

// Grouped 1x1 channel map, W[C_out, C_in/groups], optional bias[C_out].
// groups == C_in with C_out == C_in is a pure depth-wise (per-channel) scale.
Tensor channel_map(const Tensor& weight, const std::optional<Tensor>& bias, const Tensor& x,
                   std::size_t groups = 1);

// Linear remap of the time axis: W[K,T], x[B,C,V,T] -> [B,C,V,K], optional bias[K].
Tensor time_remap(const Tensor& weight, const std::optional<Tensor>& bias, const Tensor& x);

// Centered temporal convolution with symmetric zero padding.
// W[C_out, C_in, kernel] (kernel odd), x[B,C_in,V,T] -> [B,C_out,V,T].
Tensor conv_time(const Tensor& weight, const std::optional<Tensor>& bias, const Tensor& x);

// PReLU with one learned slope per channel; `channel_axis` locates C in x.
Tensor prelu(const Tensor& x, const Tensor& slope, std::size_t channel_axis);
Tensor relu6(const Tensor& x);

// Batch normalization over every axis except channel axis 1. In training
// mode the running buffers (non-grad tensors) are updated in place.
struct BatchNormAttrs {
  double momentum = 0.1;
  double epsilon = 1e-5;
  bool training = true;
};
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, const BatchNormAttrs& attrs);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor reshape(const Tensor& x, Shape new_shape);

// out[i] = mask[i] != 0 ? x[i] : +0.0. Masked entries receive exactly zero
// gradient; mask entries must be 0 or 1.
Tensor apply_mask(const Tensor& mask, const Tensor& x);

// Mean over (b,v,k) of the channel-axis Euclidean norm of (pred - truth);
// the training loss. pred and truth are [B,C,V,K]; truth gets no gradient.
Tensor euclid_seq_loss(const Tensor& pred, const Tensor& truth);

// Max over all parameter entries of |analytic - central difference| /
// max(1, |central difference|). `f` must rebuild its graph on every call.
double finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                               double h);

}  // namespace sesf
