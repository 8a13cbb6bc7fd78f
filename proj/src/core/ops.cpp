#include "arvit/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <string>

#include "arvit/core/errors.hpp"
#include "arvit/core/parallel.hpp"
#include "gemm.hpp"

namespace arvit {

namespace {

Tape& tape_of(Var v) {
  if (v.tape == nullptr) throw ContractError("use of an unbound Var");
  return *v.tape;
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         " input, got " + shape_str(v.shape()));
  }
}

// ---- broadcasting ---------------------------------------------------------

// Strides of `in` expressed on the axes of `out` (right-aligned), 0 where the
// input axis is broadcast.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  const std::size_t lead = out.size() - in.size();
  for (std::size_t i = in.size(); i-- > 0;) {
    strides[lead + i] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return strides;
}

template <class F>
void broadcast_loop(const Shape& out, const std::vector<std::size_t>& sa,
                    const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t rank = out.size();
  const std::size_t inner = out[rank - 1];
  const std::size_t ia = sa[rank - 1];
  const std::size_t ib = sb[rank - 1];
  const std::size_t n = shape_numel(out);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0;
  std::size_t ob = 0;
  for (std::size_t o = 0; o < n; o += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(o + j, oa + j * ia, ob + j * ib);
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < out[ax]) break;
      oa -= sa[ax] * out[ax];
      ob -= sb[ax] * out[ax];
      idx[ax] = 0;
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

Var binary(Var a, Var b, BinaryKind kind, const char* op) {
  Tape& tape = tape_of(a);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Shape out_shape = broadcast_shape(av.shape(), bv.shape());
  Tensor out(out_shape);
  auto sa = broadcast_strides(av.shape(), out_shape);
  auto sb = broadcast_strides(bv.shape(), out_shape);
  const Real* pa = av.data().data();
  const Real* pb = bv.data().data();
  Real* po = out.data().data();
  switch (kind) {
    case BinaryKind::kAdd:
      broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
        po[o] = pa[i] + pb[j];
      });
      break;
    case BinaryKind::kSub:
      broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
        po[o] = pa[i] - pb[j];
      });
      break;
    case BinaryKind::kMul:
      broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
        po[o] = pa[i] * pb[j];
      });
      break;
  }
  const std::size_t ida = a.id;
  const std::size_t idb = b.id;
  Tape* tp = &tape;
  return tape.record(
      std::move(out), {a, b},
      [=](const Tensor& g, GradBuffers& grads) {
        Tensor* ga = grads.slot(ida);
        Tensor* gb = grads.slot(idb);
        const Real* pg = g.data().data();
        if (ga) {
          Real* pga = ga->data().data();
          if (kind == BinaryKind::kMul) {
            const Real* pbv = tp->value(idb).data().data();
            broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
              pga[i] += pg[o] * pbv[j];
            });
          } else {
            broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t) {
              pga[i] += pg[o];
            });
          }
        }
        if (gb) {
          Real* pgb = gb->data().data();
          if (kind == BinaryKind::kMul) {
            const Real* pav = tp->value(ida).data().data();
            broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
              pgb[j] += pg[o] * pav[i];
            });
          } else {
            const Real sign = kind == BinaryKind::kSub ? -1.0 : 1.0;
            broadcast_loop(out_shape, sa, sb, [&](std::size_t o, std::size_t, std::size_t j) {
              pgb[j] += sign * pg[o];
            });
          }
        }
      },
      op);
}

// ---- unary elementwise ----------------------------------------------------

template <class Fwd, class Deriv>
Var unary(Var x, const char* op, Fwd fwd, Deriv deriv) {
  Tape& tape = tape_of(x);
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = fwd(xv[i]);
  const std::size_t idx = x.id;
  Tape* tp = &tape;
  const std::size_t out_id = tape.size();
  return tape.record(
      std::move(out), {x},
      [=](const Tensor& g, GradBuffers& grads) {
        Tensor* gx = grads.slot(idx);
        if (!gx) return;
        const Tensor& in = tp->value(idx);
        const Tensor& y = tp->value(out_id);
        for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * deriv(in[i], y[i]);
      },
      op);
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw DimensionError("shapes " + shape_str(a) + " and " + shape_str(b) +
                           " are not broadcastable");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

Var add(Var a, Var b) { return binary(a, b, BinaryKind::kAdd, "add"); }
Var sub(Var a, Var b) { return binary(a, b, BinaryKind::kSub, "sub"); }
Var mul(Var a, Var b) { return binary(a, b, BinaryKind::kMul, "mul"); }

Var relu(Var x) {
  return unary(
      x, "relu", [](Real v) { return v > 0.0 ? v : 0.0; },
      [](Real in, Real) { return in > 0.0 ? 1.0 : 0.0; });
}

Var sigmoid(Var x) {
  return unary(
      x, "sigmoid",
      [](Real v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        const Real e = std::exp(v);
        return e / (1.0 + e);
      },
      [](Real, Real y) { return y * (1.0 - y); });
}

Var gelu(Var x) {
  constexpr Real kInvSqrt2 = 0.70710678118654752440;
  const Real inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      x, "gelu", [](Real v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [inv_sqrt_2pi](Real in, Real) {
        const Real cdf = 0.5 * (1.0 + std::erf(in * kInvSqrt2));
        return cdf + in * inv_sqrt_2pi * std::exp(-0.5 * in * in);
      });
}

Var scale(Var x, Real factor) {
  return unary(
      x, "scale", [factor](Real v) { return v * factor; },
      [factor](Real, Real) { return factor; });
}

// ---- products --------------------------------------------------------------

Var matmul(Var a, Var b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa[1] != sb[0]) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(sa) + " x " +
                         shape_str(sb));
  }
  const std::size_t M = sa[0], K = sa[1], N = sb[1];
  Tensor out({M, N});
  detail::gemm_nn(M, N, K, a.value().data().data(), b.value().data().data(),
                  out.data().data());
  Tape* tp = a.tape;
  const std::size_t ida = a.id, idb = b.id;
  return tp->record(
      std::move(out), {a, b},
      [=](const Tensor& g, GradBuffers& grads) {
        if (Tensor* ga = grads.slot(ida)) {
          detail::gemm_nt(M, K, N, g.data().data(), tp->value(idb).data().data(),
                          ga->data().data());
        }
        if (Tensor* gb = grads.slot(idb)) {
          detail::gemm_tn(K, N, M, tp->value(ida).data().data(), g.data().data(),
                          gb->data().data());
        }
      },
      "matmul");
}

Var bmm(Var a, Var b, bool transpose_b) {
  require_rank(a, 3, "bmm");
  require_rank(b, 3, "bmm");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const std::size_t B = sa[0], M = sa[1], K = sa[2];
  const std::size_t N = transpose_b ? sb[1] : sb[2];
  const std::size_t Kb = transpose_b ? sb[2] : sb[1];
  if (sb[0] != B || Kb != K) {
    throw DimensionError("bmm: incompatible operands " + shape_str(sa) + " x " +
                         shape_str(sb) + (transpose_b ? " (transposed)" : ""));
  }
  Tensor out({B, M, N});
  const Real* pa = a.value().data().data();
  const Real* pb = b.value().data().data();
  Real* po = out.data().data();
  for (std::size_t i = 0; i < B; ++i) {
    if (transpose_b) {
      detail::gemm_nt(M, N, K, pa + i * M * K, pb + i * N * K, po + i * M * N);
    } else {
      detail::gemm_nn(M, N, K, pa + i * M * K, pb + i * K * N, po + i * M * N);
    }
  }
  Tape* tp = a.tape;
  const std::size_t ida = a.id, idb = b.id;
  return tp->record(
      std::move(out), {a, b},
      [=](const Tensor& g, GradBuffers& grads) {
        const Real* pg = g.data().data();
        const Real* av = tp->value(ida).data().data();
        const Real* bv = tp->value(idb).data().data();
        Tensor* ga = grads.slot(ida);
        Tensor* gb = grads.slot(idb);
        for (std::size_t i = 0; i < B; ++i) {
          const Real* gi = pg + i * M * N;
          if (transpose_b) {
            // out = a b^T: da = g b, db = g^T a
            if (ga) detail::gemm_nn(M, K, N, gi, bv + i * N * K, ga->data().data() + i * M * K);
            if (gb) detail::gemm_tn(N, K, M, gi, av + i * M * K, gb->data().data() + i * N * K);
          } else {
            if (ga) detail::gemm_nt(M, K, N, gi, bv + i * K * N, ga->data().data() + i * M * K);
            if (gb) detail::gemm_tn(K, N, M, av + i * M * K, gi, gb->data().data() + i * K * N);
          }
        }
      },
      "bmm");
}

Var linear(Var x, Var weight, Var bias) {
  require_rank(weight, 2, "linear");
  require_rank(bias, 1, "linear");
  const Shape& sx = x.shape();
  const std::size_t in = weight.shape()[0];
  const std::size_t out_features = weight.shape()[1];
  if (sx.back() != in || bias.shape()[0] != out_features) {
    throw DimensionError("linear: input " + shape_str(sx) + " incompatible with weight " +
                         shape_str(weight.shape()) + " and bias " +
                         shape_str(bias.shape()));
  }
  const std::size_t rows = x.value().numel() / in;
  Shape out_shape = sx;
  out_shape.back() = out_features;
  Tensor out(out_shape);
  Real* po = out.data().data();
  const Real* pbias = bias.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(pbias, pbias + out_features, po + r * out_features);
  }
  detail::gemm_nn(rows, out_features, in, x.value().data().data(),
                  weight.value().data().data(), po);
  Tape* tp = x.tape;
  const std::size_t idx = x.id, idw = weight.id, idb = bias.id;
  return tp->record(
      std::move(out), {x, weight, bias},
      [=](const Tensor& g, GradBuffers& grads) {
        const Real* pg = g.data().data();
        if (Tensor* gx = grads.slot(idx)) {
          detail::gemm_nt(rows, in, out_features, pg, tp->value(idw).data().data(),
                          gx->data().data());
        }
        if (Tensor* gw = grads.slot(idw)) {
          detail::gemm_tn(in, out_features, rows, tp->value(idx).data().data(), pg,
                          gw->data().data());
        }
        if (Tensor* gb = grads.slot(idb)) {
          Real* pgb = gb->data().data();
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t j = 0; j < out_features; ++j) pgb[j] += pg[r * out_features + j];
          }
        }
      },
      "linear");
}

// ---- convolution -----------------------------------------------------------

namespace {

struct ConvGeometry {
  std::size_t C, H, W, F, kh, kw, stride, pad, Ho, Wo;
  std::size_t patch() const { return C * kh * kw; }
  std::size_t positions() const { return Ho * Wo; }
};

void im2col(const ConvGeometry& g, const Real* in, Real* col) {
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        Real* row = col + ((c * g.kh + ki) * g.kw + kj) * g.positions();
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(g.H) &&
                                ix < static_cast<long>(g.W);
            row[oy * g.Wo + ox] = inside ? in[(c * g.H + iy) * g.W + ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const Real* col, Real* in) {
  for (std::size_t c = 0; c < g.C; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const Real* row = col + ((c * g.kh + ki) * g.kw + kj) * g.positions();
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.H)) continue;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.W)) continue;
            in[(c * g.H + iy) * g.W + ix] += row[oy * g.Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(Var input, Var kernel, Var bias, std::size_t stride, std::size_t pad) {
  require_rank(input, 4, "conv2d");
  require_rank(kernel, 4, "conv2d");
  require_rank(bias, 1, "conv2d");
  const Shape& si = input.shape();
  const Shape& sk = kernel.shape();
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  if (sk[1] != si[1]) {
    throw DimensionError("conv2d: kernel " + shape_str(sk) + " expects " +
                         std::to_string(sk[1]) + " channels, input is " + shape_str(si));
  }
  if (bias.shape()[0] != sk[0]) {
    throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " does not match kernel " +
                         shape_str(sk));
  }
  if (sk[2] > si[2] + 2 * pad || sk[3] > si[3] + 2 * pad) {
    throw DimensionError("conv2d: kernel " + shape_str(sk) + " larger than padded input " +
                         shape_str(si) + " (pad " + std::to_string(pad) + ")");
  }
  ConvGeometry g{si[1], si[2], si[3], sk[0], sk[2], sk[3], stride, pad, 0, 0};
  g.Ho = (g.H + 2 * pad - g.kh) / stride + 1;
  g.Wo = (g.W + 2 * pad - g.kw) / stride + 1;
  const std::size_t N = si[0];
  Tensor out({N, g.F, g.Ho, g.Wo});
  const Real* pin = input.value().data().data();
  const Real* pk = kernel.value().data().data();
  const Real* pb = bias.value().data().data();
  Real* po = out.data().data();
  const std::size_t in_stride = g.C * g.H * g.W;
  const std::size_t out_stride = g.F * g.positions();
  parallel_for(N, [&](std::size_t n) {
    std::vector<Real> col(g.patch() * g.positions());
    im2col(g, pin + n * in_stride, col.data());
    Real* o = po + n * out_stride;
    for (std::size_t f = 0; f < g.F; ++f) {
      std::fill(o + f * g.positions(), o + (f + 1) * g.positions(), pb[f]);
    }
    detail::gemm_nn(g.F, g.positions(), g.patch(), pk, col.data(), o);
  });
  Tape* tp = input.tape;
  const std::size_t idi = input.id, idk = kernel.id, idb = bias.id;
  return tp->record(
      std::move(out), {input, kernel, bias},
      [=](const Tensor& grad, GradBuffers& grads) {
        Tensor* gi = grads.slot(idi);
        Tensor* gk = grads.slot(idk);
        Tensor* gb = grads.slot(idb);
        const Real* pg = grad.data().data();
        const Real* xin = tp->value(idi).data().data();
        const Real* wk = tp->value(idk).data().data();
        const std::size_t ksize = g.F * g.patch();
        // Per-sample kernel-gradient partials, reduced in sample order below.
        std::vector<Real> gk_parts(gk ? N * ksize : 0, 0.0);
        parallel_for(N, [&](std::size_t n) {
          const Real* gn = pg + n * out_stride;
          if (gk) {
            std::vector<Real> col(g.patch() * g.positions());
            im2col(g, xin + n * in_stride, col.data());
            detail::gemm_nt(g.F, g.patch(), g.positions(), gn, col.data(),
                            gk_parts.data() + n * ksize);
          }
          if (gi) {
            std::vector<Real> dcol(g.patch() * g.positions(), 0.0);
            detail::gemm_tn(g.patch(), g.positions(), g.F, wk, gn, dcol.data());
            col2im(g, dcol.data(), gi->data().data() + n * in_stride);
          }
        });
        if (gk) {
          Real* pgk = gk->data().data();
          for (std::size_t n = 0; n < N; ++n) {
            const Real* part = gk_parts.data() + n * ksize;
            for (std::size_t i = 0; i < ksize; ++i) pgk[i] += part[i];
          }
        }
        if (gb) {
          Real* pgb = gb->data().data();
          for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t f = 0; f < g.F; ++f) {
              const Real* gf = pg + n * out_stride + f * g.positions();
              Real s = 0.0;
              for (std::size_t p = 0; p < g.positions(); ++p) s += gf[p];
              pgb[f] += s;
            }
          }
        }
      },
      "conv2d");
}

Var max_pool2d(Var x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  require_rank(x, 4, "max_pool2d");
  if (kernel == 0 || stride == 0) throw DimensionError("max_pool2d: kernel and stride must be >= 1");
  if (pad >= kernel) throw DimensionError("max_pool2d: padding must be smaller than the kernel");
  const Shape& s = x.shape();
  const std::size_t N = s[0], C = s[1], H = s[2], W = s[3];
  if (kernel > H + 2 * pad || kernel > W + 2 * pad) {
    throw DimensionError("max_pool2d: window larger than padded input " + shape_str(s));
  }
  const std::size_t Ho = (H + 2 * pad - kernel) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - kernel) / stride + 1;
  Tensor out({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const Real* px = x.value().data().data();
  for (std::size_t plane = 0; plane < N * C; ++plane) {
    const Real* in = px + plane * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        Real best = -std::numeric_limits<Real>::infinity();
        std::size_t best_at = 0;
        bool found = false;
        for (std::size_t ki = 0; ki < kernel; ++ki) {
          const long iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
          if (iy < 0 || iy >= static_cast<long>(H)) continue;
          for (std::size_t kj = 0; kj < kernel; ++kj) {
            const long ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
            if (ix < 0 || ix >= static_cast<long>(W)) continue;
            const std::size_t at = static_cast<std::size_t>(iy) * W + static_cast<std::size_t>(ix);
            if (!found || in[at] > best) {
              best = in[at];
              best_at = at;
              found = true;
            }
          }
        }
        const std::size_t o = (plane * Ho + oy) * Wo + ox;
        out[o] = best;
        (*argmax)[o] = plane * H * W + best_at;
      }
    }
  }
  const std::size_t idx = x.id;
  return x.tape->record(
      std::move(out), {x},
      [idx, argmax](const Tensor& g, GradBuffers& grads) {
        Tensor* gx = grads.slot(idx);
        if (!gx) return;
        for (std::size_t o = 0; o < g.numel(); ++o) (*gx)[(*argmax)[o]] += g[o];
      },
      "max_pool2d");
}

// ---- normalization ---------------------------------------------------------

Var layer_norm(Var x, Var gamma, Var beta, Real eps) {
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  const std::size_t D = x.shape().back();
  if (gamma.shape() != Shape{D} || beta.shape() != Shape{D}) {
    throw DimensionError("layer_norm: gamma/beta must have shape [" + std::to_string(D) + "]");
  }
  const Tensor& xv = x.value();
  const std::size_t rows = xv.numel() / D;
  Tensor out(xv.shape());
  auto xhat = std::make_shared<std::vector<Real>>(xv.numel());
  auto inv_std = std::make_shared<std::vector<Real>>(rows);
  const Real* pg = gamma.value().data().data();
  const Real* pb = beta.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = xv.data().data() + r * D;
    Real mu = 0.0;
    for (std::size_t j = 0; j < D; ++j) mu += row[j];
    mu /= static_cast<Real>(D);
    Real var = 0.0;
    for (std::size_t j = 0; j < D; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Real>(D);
    const Real is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < D; ++j) {
      const Real h = (row[j] - mu) * is;
      (*xhat)[r * D + j] = h;
      out[r * D + j] = h * pg[j] + pb[j];
    }
  }
  Tape* tp = x.tape;
  const std::size_t idx = x.id, idg = gamma.id, idb = beta.id;
  return tp->record(
      std::move(out), {x, gamma, beta},
      [=](const Tensor& g, GradBuffers& grads) {
        Tensor* gx = grads.slot(idx);
        Tensor* gg = grads.slot(idg);
        Tensor* gb = grads.slot(idb);
        const Real* gam = tp->value(idg).data().data();
        std::vector<Real> dxhat(D);
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* gr = g.data().data() + r * D;
          const Real* hr = xhat->data() + r * D;
          if (gg) for (std::size_t j = 0; j < D; ++j) (*gg)[j] += gr[j] * hr[j];
          if (gb) for (std::size_t j = 0; j < D; ++j) (*gb)[j] += gr[j];
          if (!gx) continue;
          Real mean_d = 0.0, mean_dh = 0.0;
          for (std::size_t j = 0; j < D; ++j) {
            dxhat[j] = gr[j] * gam[j];
            mean_d += dxhat[j];
            mean_dh += dxhat[j] * hr[j];
          }
          mean_d /= static_cast<Real>(D);
          mean_dh /= static_cast<Real>(D);
          Real* gxr = gx->data().data() + r * D;
          for (std::size_t j = 0; j < D; ++j) {
            gxr[j] += (*inv_std)[r] * (dxhat[j] - mean_d - hr[j] * mean_dh);
          }
        }
      },
      "layer_norm");
}

namespace {

void check_channel_params(const Var& x, const Var& gamma, const Var& beta, const char* op) {
  require_rank(x, 4, op);
  const std::size_t C = x.shape()[1];
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
    throw DimensionError(std::string(op) + ": gamma/beta must have shape [" +
                         std::to_string(C) + "]");
  }
}

}  // namespace

Var batch_norm_train(Var x, Var gamma, Var beta, Real eps, BatchStats* stats) {
  check_channel_params(x, gamma, beta, "batch_norm");
  const Shape& s = x.shape();
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  const Real count = static_cast<Real>(N * HW);
  const Tensor& xv = x.value();
  Tensor mean({C}), var({C});
  for (std::size_t c = 0; c < C; ++c) {
    Real mu = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const Real* p = xv.data().data() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) mu += p[i];
    }
    mu /= count;
    Real v = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const Real* p = xv.data().data() + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) v += (p[i] - mu) * (p[i] - mu);
    }
    mean[c] = mu;
    var[c] = v / count;
  }
  auto xhat = std::make_shared<Tensor>(s);
  auto inv_std = std::make_shared<std::vector<Real>>(C);
  Tensor out(s);
  const Real* pg = gamma.value().data().data();
  const Real* pb = beta.value().data().data();
  for (std::size_t c = 0; c < C; ++c) (*inv_std)[c] = 1.0 / std::sqrt(var[c] + eps);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        const Real h = (xv[base + i] - mean[c]) * (*inv_std)[c];
        (*xhat)[base + i] = h;
        out[base + i] = h * pg[c] + pb[c];
      }
    }
  }
  if (stats) *stats = BatchStats{mean, var};
  Tape* tp = x.tape;
  const std::size_t idx = x.id, idg = gamma.id, idb = beta.id;
  return tp->record(
      std::move(out), {x, gamma, beta},
      [=](const Tensor& g, GradBuffers& grads) {
        Tensor* gx = grads.slot(idx);
        Tensor* gg = grads.slot(idg);
        Tensor* gb = grads.slot(idb);
        const Real* gam = tp->value(idg).data().data();
        for (std::size_t c = 0; c < C; ++c) {
          Real sum_g = 0.0, sum_gh = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              sum_g += g[base + i];
              sum_gh += g[base + i] * (*xhat)[base + i];
            }
          }
          if (gg) (*gg)[c] += sum_gh;
          if (gb) (*gb)[c] += sum_g;
          if (!gx) continue;
          const Real k = gam[c] * (*inv_std)[c] / count;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              (*gx)[base + i] += k * (count * g[base + i] - sum_g - (*xhat)[base + i] * sum_gh);
            }
          }
        }
      },
      "batch_norm");
}

Var batch_norm_eval(Var x, Var gamma, Var beta, const Tensor& mean, const Tensor& variance,
                    Real eps) {
  check_channel_params(x, gamma, beta, "batch_norm_eval");
  const Shape& s = x.shape();
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  if (mean.shape() != Shape{C} || variance.shape() != Shape{C}) {
    throw DimensionError("batch_norm_eval: running statistics must have shape [" +
                         std::to_string(C) + "]");
  }
  auto inv_std = std::make_shared<std::vector<Real>>(C);
  for (std::size_t c = 0; c < C; ++c) (*inv_std)[c] = 1.0 / std::sqrt(variance[c] + eps);
  auto mu = std::make_shared<std::vector<Real>>(mean.vec());
  const Tensor& xv = x.value();
  Tensor out(s);
  const Real* pg = gamma.value().data().data();
  const Real* pb = beta.value().data().data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const std::size_t base = (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) {
        out[base + i] = (xv[base + i] - (*mu)[c]) * (*inv_std)[c] * pg[c] + pb[c];
      }
    }
  }
  Tape* tp = x.tape;
  const std::size_t idx = x.id, idg = gamma.id, idb = beta.id;
  return tp->record(
      std::move(out), {x, gamma, beta},
      [=](const Tensor& g, GradBuffers& grads) {
        Tensor* gx = grads.slot(idx);
        Tensor* gg = grads.slot(idg);
        Tensor* gb = grads.slot(idb);
        const Tensor& xin = tp->value(idx);
        const Real* gam = tp->value(idg).data().data();
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) {
              const Real gi = g[base + i];
              if (gx) (*gx)[base + i] += gi * gam[c] * (*inv_std)[c];
              if (gg) (*gg)[c] += gi * (xin[base + i] - (*mu)[c]) * (*inv_std)[c];
              if (gb) (*gb)[c] += gi;
            }
          }
        }
      },
      "batch_norm_eval");
}

// ---- softmax / pooling -----------------------------------------------------

Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  const std::size_t D = xv.shape().back();
  const std::size_t rows = xv.numel() / D;
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* row = xv.data().data() + r * D;
    Real* o = out.data().data() + r * D;
    const Real mx = *std::max_element(row, row + D);
    Real total = 0.0;
    for (std::size_t j = 0; j < D; ++j) {
      o[j] = std::exp(row[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < D; ++j) o[j] /= total;
  }
  Tape* tp = x.tape;
  const std::size_t idx = x.id;
  const std::size_t out_id = tp->size();
  return tp->record(
      std::move(out), {x},
      [=](const Tensor& g, GradBuffers& grads) {
        Tensor* gx = grads.slot(idx);
        if (!gx) return;
        const Tensor& y = tp->value(out_id);
        for (std::size_t r = 0; r < rows; ++r) {
          const Real* yr = y.data().data() + r * D;
          const Real* gr = g.data().data() + r * D;
          Real dot = 0.0;
          for (std::size_t j = 0; j < D; ++j) dot += gr[j] * yr[j];
          Real* gxr = gx->data().data() + r * D;
          for (std::size_t j = 0; j < D; ++j) gxr[j] += yr[j] * (gr[j] - dot);
        }
      },
      "softmax_rows");
}

Var global_avg_pool(Var x) {
  require_rank(x, 4, "global_avg_pool");
  const Shape& s = x.shape();
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  Tensor out({N, C});
  const Real* px = x.value().data().data();
  for (std::size_t p = 0; p < N * C; ++p) {
    Real acc = 0.0;
    for (std::size_t i = 0; i < HW; ++i) acc += px[p * HW + i];
    out[p] = acc / static_cast<Real>(HW);
  }
  const std::size_t idx = x.id;
  return x.tape->record(
      std::move(out), {x},
      [=](const Tensor& g, GradBuffers& grads) {
        Tensor* gx = grads.slot(idx);
        if (!gx) return;
        for (std::size_t p = 0; p < N * C; ++p) {
          const Real share = g[p] / static_cast<Real>(HW);
          for (std::size_t i = 0; i < HW; ++i) (*gx)[p * HW + i] += share;
        }
      },
      "global_avg_pool");
}

Var global_max_pool(Var x) {
  require_rank(x, 4, "global_max_pool");
  const Shape& s = x.shape();
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  Tensor out({N, C});
  auto argmax = std::make_shared<std::vector<std::size_t>>(N * C);
  const Real* px = x.value().data().data();
  for (std::size_t p = 0; p < N * C; ++p) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < HW; ++i) {
      if (px[p * HW + i] > px[p * HW + best]) best = i;
    }
    out[p] = px[p * HW + best];
    (*argmax)[p] = p * HW + best;
  }
  const std::size_t idx = x.id;
  return x.tape->record(
      std::move(out), {x},
      [idx, argmax](const Tensor& g, GradBuffers& grads) {
        Tensor* gx = grads.slot(idx);
        if (!gx) return;
        for (std::size_t p = 0; p < g.numel(); ++p) (*gx)[(*argmax)[p]] += g[p];
      },
      "global_max_pool");
}

// ---- shape ops -------------------------------------------------------------

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t idx = x.id;
  return x.tape->record(
      std::move(out), {x},
      [idx](const Tensor& g, GradBuffers& grads) {
        Tensor* gx = grads.slot(idx);
        if (!gx) return;
        for (std::size_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i];
      },
      "reshape");
}

Var permute(Var x, const std::vector<std::size_t>& perm) {
  const Shape& s = x.shape();
  const std::size_t rank = s.size();
  if (perm.size() != rank) throw DimensionError("permute: permutation rank mismatch");
  std::vector<bool> seen(rank, false);
  for (std::size_t p : perm) {
    if (p >= rank || seen[p]) throw DimensionError("permute: invalid permutation");
    seen[p] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * s[i + 1];
  Shape out_shape(rank);
  std::vector<std::size_t> src(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = s[perm[i]];
    src[i] = in_strides[perm[i]];
  }
  // Flat source offset for every output element; reused by backward.
  auto mapping = std::make_shared<std::vector<std::size_t>>(shape_numel(out_shape));
  const std::vector<std::size_t> zero(rank, 0);
  broadcast_loop(out_shape, src, zero, [&](std::size_t o, std::size_t i, std::size_t) {
    (*mapping)[o] = i;
  });
  const Tensor& xv = x.value();
  Tensor out(out_shape);
  for (std::size_t o = 0; o < out.numel(); ++o) out[o] = xv[(*mapping)[o]];
  const std::size_t idx = x.id;
  return x.tape->record(
      std::move(out), {x},
      [idx, mapping](const Tensor& g, GradBuffers& grads) {
        Tensor* gx = grads.slot(idx);
        if (!gx) return;
        for (std::size_t o = 0; o < g.numel(); ++o) (*gx)[(*mapping)[o]] += g[o];
      },
      "permute");
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw DimensionError("concat: shapes " + shape_str(first) + " and " + shape_str(s) +
                             " differ off the concatenation axis");
      }
    }
    total += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
  for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
  Shape out_shape = first;
  out_shape[axis] = total;
  Tensor out(out_shape);
  std::vector<std::size_t> widths, ids;
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const std::size_t w = p.shape()[axis] * inner;
    const Real* src = p.value().data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy(src + o * w, src + (o + 1) * w, out.data().data() + o * total * inner + offset);
    }
    widths.push_back(w);
    ids.push_back(p.id);
    offset += w;
  }
  return parts[0].tape->record(
      std::move(out), parts,
      [=](const Tensor& g, GradBuffers& grads) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (Tensor* gp = grads.slot(ids[k])) {
            for (std::size_t o = 0; o < outer; ++o) {
              const Real* src = g.data().data() + o * total * inner + off;
              Real* dst = gp->data().data() + o * widths[k];
              for (std::size_t i = 0; i < widths[k]; ++i) dst[i] += src[i];
            }
          }
          off += widths[k];
        }
      },
      "concat");
}

Var slice(Var x, std::size_t axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw DimensionError("slice: axis out of range");
  if (length == 0 || start + length > s[axis]) {
    throw DimensionError("slice: range [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") outside axis of size " +
                         std::to_string(s[axis]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  Shape out_shape = s;
  out_shape[axis] = length;
  Tensor out(out_shape);
  const std::size_t full = s[axis] * inner;
  const std::size_t w = length * inner;
  const Real* src = x.value().data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(src + o * full + start * inner, src + o * full + start * inner + w,
              out.data().data() + o * w);
  }
  const std::size_t idx = x.id;
  return x.tape->record(
      std::move(out), {x},
      [=](const Tensor& g, GradBuffers& grads) {
        Tensor* gx = grads.slot(idx);
        if (!gx) return;
        for (std::size_t o = 0; o < outer; ++o) {
          Real* dst = gx->data().data() + o * full + start * inner;
          const Real* gs = g.data().data() + o * w;
          for (std::size_t i = 0; i < w; ++i) dst[i] += gs[i];
        }
      },
      "slice");
}

Var sum(Var x) {
  Real acc = 0.0;
  for (Real v : x.value().data()) acc += v;
  const std::size_t idx = x.id;
  return x.tape->record(
      Tensor::scalar(acc), {x},
      [idx](const Tensor& g, GradBuffers& grads) {
        Tensor* gx = grads.slot(idx);
        if (!gx) return;
        for (Real& v : gx->data()) v += g[0];
      },
      "sum");
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<Real>(x.value().numel())); }

}  // namespace arvit
