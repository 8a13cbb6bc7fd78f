#pragma once

#include <cstddef>
#include <vector>

#include "arvit/core/tape.hpp"
#include "arvit/core/tensor.hpp"

// Differentiable operations. Each records its output on the tape of its
// first argument and registers the matching backward rule.
namespace arvit {

// a[m,k] x b[k,n] -> [m,n]
Var matmul(Var a, Var b);

// Batched product a[B,m,k] x b[B,k,n] -> [B,m,n]. With transpose_b the second
// operand is read as b[B,n,k], i.e. a x b^T per batch.
Var bmm(Var a, Var b, bool transpose_b = false);

// Affine map over the last axis: x[..., in] w[in,out] + b[out] -> [..., out].
Var linear(Var x, Var weight, Var bias);

// Cross-correlation with zero padding.
// input[N,C,H,W], kernel[F,C,kh,kw], bias[F] -> [N,F,H',W'] with
// H' = (H + 2 pad - kh) / stride + 1.
Var conv2d(Var input, Var kernel, Var bias, std::size_t stride, std::size_t pad);

// Max pooling over k x k windows; padded cells never win. Ties go to the
// first position in row-major order.
Var max_pool2d(Var x, std::size_t kernel, std::size_t stride, std::size_t pad);

Var relu(Var x);
Var sigmoid(Var x);
Var gelu(Var x);  // exact erf form
Var scale(Var x, Real factor);

// Broadcasting elementwise arithmetic (numpy rules, trailing axes aligned,
// size-1 axes expand). Backward sums over broadcast axes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);

// Normalizes over the last axis with biased variance, then gamma * x + beta.
Var layer_norm(Var x, Var gamma, Var beta, Real eps);

struct BatchStats {
  Tensor mean;      // [C]
  Tensor variance;  // [C], biased
};

// Per-channel normalization of x[N,C,H,W] with statistics of the batch.
// The statistics used are written to `stats` when non-null.
Var batch_norm_train(Var x, Var gamma, Var beta, Real eps, BatchStats* stats);

// Per-channel normalization with fixed (running) statistics.
Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& mean,
                    const Tensor& variance, Real eps);

// Softmax over the last axis, max-subtracted.
Var softmax_rows(Var x);

// [N,C,H,W] -> [N,C]
Var global_avg_pool(Var x);
// [N,C,H,W] -> [N,C]; gradient goes to the first maximum in row-major order.
Var global_max_pool(Var x);

Var reshape(Var x, Shape shape);
// out.shape[i] = x.shape[perm[i]]
Var permute(Var x, const std::vector<std::size_t>& perm);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length);

// Sum / mean of all elements -> shape [1].
Var sum(Var x);
Var mean(Var x);

// Shape produced by broadcasting a against b; throws DimensionError.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace arvit
