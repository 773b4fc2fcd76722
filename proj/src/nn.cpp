// Copyright 2026 The medpose Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "medpose/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "medpose/error.hpp"

namespace medpose::nn {

void Context::consume() {
  if (consumed_) fail(ErrorKind::kShape, "backward called twice on the same context");
  consumed_ = true;
}

namespace {

template <typename T>
void require_rank(const BasicTensor<T>& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    fail(ErrorKind::kShape, std::string(what) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_string(t.shape()));
  }
}

template <typename T>
BasicTensor<T> as_matrix(const BasicTensor<T>& x, std::size_t cols, const char* what) {
  if (x.rank() == 0 || x.shape().back() != cols) {
    fail(ErrorKind::kShape, std::string(what) + ": inner dimension of " + shape_string(x.shape()) +
                                " does not match " + std::to_string(cols));
  }
  return x.reshaped({x.numel() / cols, cols});
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
BasicTensor<T> column_sums(const BasicTensor<T>& m) {
  const std::size_t rows = m.dim(0);
  const std::size_t cols = m.dim(1);
  BasicTensor<T> out({cols});
  for (std::size_t r = 0; r < rows; ++r) axpy(T(1), m.data() + r * cols, out.data(), cols);
  return out;
}

template <typename T>
BasicTensor<T> row_sums(const BasicTensor<T>& m) {
  const std::size_t rows = m.dim(0);
  const std::size_t cols = m.dim(1);
  BasicTensor<T> out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += m[r * cols + c];
    out[r] = s;
  }
  return out;
}

template <typename T>
void scale_inplace(BasicTensor<T>& t, T s) {
  for (T& v : t.values()) v *= s;
}

}  // namespace

template <typename T>
void add_inplace(BasicTensor<T>& acc, const BasicTensor<T>& x) {
  if (acc.numel() != x.numel()) {
    fail(ErrorKind::kShape, "add: " + shape_string(acc.shape()) + " vs " + shape_string(x.shape()));
  }
  axpy(T(1), x.data(), acc.data(), acc.numel());
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_rank(a, 2, "transpose");
  const std::size_t rows = a.dim(0);
  const std::size_t cols = a.dim(1);
  BasicTensor<T> out({cols, rows});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
  }
  return out;
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0);
  const std::size_t k = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    fail(ErrorKind::kShape, "matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  BasicTensor<T> c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) axpy(a[i * k + p], b.data() + p * n, crow, n);
  }
  return c;
}

template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return matmul(a, transpose(b));
}

template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a, 2, "matmul_tn");
  require_rank(b, 2, "matmul_tn");
  const std::size_t k = a.dim(0);
  const std::size_t m = a.dim(1);
  const std::size_t n = b.dim(1);
  if (b.dim(0) != k) {
    fail(ErrorKind::kShape,
         "matmul_tn: " + shape_string(a.shape()) + "^T x " + shape_string(b.shape()));
  }
  BasicTensor<T> c({m, n});
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) axpy(a[p * m + i], brow, c.data() + i * n, n);
  }
  return c;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      LinearContext<T>* ctx, std::optional<LowRank<T>> adapter) {
  require_rank(w, 2, "linear weight");
  const std::size_t dout = w.dim(0);
  const std::size_t din = w.dim(1);
  require_shape(b.shape(), {dout}, "linear bias");
  BasicTensor<T> xm = as_matrix(x, din, "linear");
  const std::size_t rows = xm.dim(0);

  BasicTensor<T> y = matmul_nt(xm, w);
  for (std::size_t r = 0; r < rows; ++r) axpy(T(1), b.data(), y.data() + r * dout, dout);

  BasicTensor<T> u;
  if (adapter) {
    const BasicTensor<T>& a = *adapter->a;
    const BasicTensor<T>& bl = *adapter->b;
    require_rank(a, 2, "adapter A");
    require_shape(bl.shape(), {dout, a.dim(0)}, "adapter B");
    require_shape(a.shape(), {a.dim(0), din}, "adapter A");
    u = matmul_nt(xm, a);
    BasicTensor<T> delta = matmul_nt(u, bl);
    axpy(adapter->scale, delta.data(), y.data(), y.numel());
  }

  Shape out_shape = x.shape();
  out_shape.back() = dout;
  if (ctx) {
    ctx->input_shape = x.shape();
    ctx->x = std::move(xm);
    ctx->u = std::move(u);
  }
  return y.reshaped(std::move(out_shape));
}

template <typename T>
LinearGrads<T> linear_backward(LinearContext<T>& ctx, const BasicTensor<T>& w,
                               const BasicTensor<T>& grad, std::optional<LowRank<T>> adapter,
                               GradRequest request) {
  ctx.consume();
  const std::size_t dout = w.dim(0);
  const BasicTensor<T> g = as_matrix(grad, dout, "linear backward");
  LinearGrads<T> out;
  if (request.input) out.dx = matmul(g, w);
  if (request.params) {
    out.dw = matmul_tn(g, ctx.x);
    out.db = column_sums(g);
  }
  if (adapter) {
    BasicTensor<T> gu = matmul(g, *adapter->b);  // (M, r)
    scale_inplace(gu, adapter->scale);
    if (request.input) add_inplace(out.dx, matmul(gu, *adapter->a));
    if (request.adapter) {
      out.da = matmul_tn(gu, ctx.x);
      out.db_lora = matmul_tn(g, ctx.u);
      scale_inplace(out.db_lora, adapter->scale);
    }
  }
  if (request.input) out.dx = out.dx.reshaped(ctx.input_shape);
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps, LayerNormContext<T>* ctx) {
  const std::size_t d = gamma.numel();
  if (d < 1) fail(ErrorKind::kShape, "layer_norm over an empty axis");
  require_shape(beta.shape(), gamma.shape(), "layer_norm beta");
  const BasicTensor<T> xm = as_matrix(x, d, "layer_norm");
  const std::size_t rows = xm.dim(0);
  BasicTensor<T> y(x.shape());
  BasicTensor<T> xhat({rows, d});
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xm.data() + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += xr[i];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = xr[i] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + static_cast<double>(eps));
    rstd[r] = static_cast<T>(rs);
    for (std::size_t i = 0; i < d; ++i) {
      const T h = static_cast<T>((xr[i] - mean) * rs);
      xhat[r * d + i] = h;
      y[r * d + i] = gamma[i] * h + beta[i];
    }
  }
  if (ctx) {
    ctx->xhat = std::move(xhat);
    ctx->rstd = std::move(rstd);
  }
  return y;
}

template <typename T>
LayerNormGrads<T> layer_norm_backward(LayerNormContext<T>& ctx, const BasicTensor<T>& gamma,
                                      const BasicTensor<T>& grad, GradRequest request) {
  ctx.consume();
  const std::size_t d = gamma.numel();
  const std::size_t rows = ctx.xhat.dim(0);
  const BasicTensor<T> g = as_matrix(grad, d, "layer_norm backward");
  LayerNormGrads<T> out;
  if (request.params) {
    out.dgamma = BasicTensor<T>({d});
    out.dbeta = BasicTensor<T>({d});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t i = 0; i < d; ++i) {
        out.dgamma[i] += g[r * d + i] * ctx.xhat[r * d + i];
        out.dbeta[i] += g[r * d + i];
      }
    }
  }
  if (request.input) {
    out.dx = BasicTensor<T>(grad.shape());
    std::vector<double> dxhat(d);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_g = 0.0;
      double mean_gx = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        dxhat[i] = static_cast<double>(g[r * d + i]) * gamma[i];
        mean_g += dxhat[i];
        mean_gx += dxhat[i] * ctx.xhat[r * d + i];
      }
      mean_g /= static_cast<double>(d);
      mean_gx /= static_cast<double>(d);
      for (std::size_t i = 0; i < d; ++i) {
        out.dx[r * d + i] = static_cast<T>(
            ctx.rstd[r] * (dxhat[i] - mean_g - ctx.xhat[r * d + i] * mean_gx));
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> channel_layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                  const BasicTensor<T>& beta, T eps, ChannelNormContext<T>* ctx) {
  require_rank(x, 3, "channel_layer_norm");
  const std::size_t c = x.dim(0);
  const std::size_t hw = x.dim(1) * x.dim(2);
  const BasicTensor<T> pixels = transpose(x.reshaped({c, hw}));
  BasicTensor<T> y = layer_norm(pixels, gamma, beta, eps, ctx ? &ctx->inner : nullptr);
  if (ctx) ctx->shape = x.shape();
  return transpose(y).reshaped(x.shape());
}

template <typename T>
LayerNormGrads<T> channel_layer_norm_backward(ChannelNormContext<T>& ctx,
                                              const BasicTensor<T>& gamma,
                                              const BasicTensor<T>& grad, GradRequest request) {
  ctx.consume();
  const std::size_t c = ctx.shape[0];
  const std::size_t hw = ctx.shape[1] * ctx.shape[2];
  LayerNormGrads<T> out =
      layer_norm_backward(ctx.inner, gamma, transpose(grad.reshaped({c, hw})), request);
  if (request.input) out.dx = transpose(out.dx).reshaped(ctx.shape);
  return out;
}

// ---------------------------------------------------------------------------

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;
}  // namespace

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x, GeluContext<T>* ctx) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T v = x[i];
    y[i] = T(0.5) * v * (T(1) + std::tanh(T(kGeluC) * (v + T(kGeluA) * v * v * v)));
  }
  if (ctx) ctx->x = x;
  return y;
}

template <typename T>
BasicTensor<T> gelu_backward(GeluContext<T>& ctx, const BasicTensor<T>& grad) {
  ctx.consume();
  BasicTensor<T> dx(grad.shape());
  for (std::size_t i = 0; i < grad.numel(); ++i) {
    const T v = ctx.x[i];
    const T t = std::tanh(T(kGeluC) * (v + T(kGeluA) * v * v * v));
    const T du = T(kGeluC) * (T(1) + T(3 * kGeluA) * v * v);
    dx[i] = grad[i] * (T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * du);
  }
  return dx;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, SoftmaxContext<T>* ctx) {
  if (x.rank() == 0 || x.shape().back() < 1) fail(ErrorKind::kShape, "softmax over an empty axis");
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.numel() / k;
  BasicTensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * k;
    T* yr = y.data() + r * k;
    const T mx = *std::max_element(xr, xr + k);
    T sum = 0;
    for (std::size_t i = 0; i < k; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    for (std::size_t i = 0; i < k; ++i) yr[i] /= sum;
  }
  if (ctx) ctx->y = y;
  return y;
}

template <typename T>
BasicTensor<T> softmax_backward(SoftmaxContext<T>& ctx, const BasicTensor<T>& grad) {
  ctx.consume();
  const std::size_t k = ctx.y.shape().back();
  const std::size_t rows = ctx.y.numel() / k;
  BasicTensor<T> dx(grad.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* yr = ctx.y.data() + r * k;
    const T* gr = grad.data() + r * k;
    T dot = 0;
    for (std::size_t i = 0; i < k; ++i) dot += gr[i] * yr[i];
    for (std::size_t i = 0; i < k; ++i) dx[r * k + i] = yr[i] * (gr[i] - dot);
  }
  return dx;
}

// ---------------------------------------------------------------------------

namespace {

template <typename T>
BasicTensor<T> head_slice(const BasicTensor<T>& qkv, std::size_t offset, std::size_t hd) {
  const std::size_t tokens = qkv.dim(0);
  const std::size_t width = qkv.dim(1);
  BasicTensor<T> out({tokens, hd});
  for (std::size_t t = 0; t < tokens; ++t) {
    std::copy_n(qkv.data() + t * width + offset, hd, out.data() + t * hd);
  }
  return out;
}

template <typename T>
void head_store(BasicTensor<T>& dst, const BasicTensor<T>& src, std::size_t offset) {
  const std::size_t tokens = src.dim(0);
  const std::size_t hd = src.dim(1);
  const std::size_t width = dst.dim(1);
  for (std::size_t t = 0; t < tokens; ++t) {
    std::copy_n(src.data() + t * hd, hd, dst.data() + t * width + offset);
  }
}

}  // namespace

template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& x, const AttentionParams<T>& p,
                                    AttentionContext<T>* ctx) {
  require_rank(x, 2, "multi_head_attention");
  const std::size_t tokens = x.dim(0);
  const std::size_t d = x.dim(1);
  if (p.heads == 0 || d % p.heads != 0) {
    fail(ErrorKind::kConfig, "embedding dim " + std::to_string(d) +
                                 " is not divisible by heads " + std::to_string(p.heads));
  }
  require_shape(p.w_qkv->shape(), {3 * d, d}, "attention qkv weight");
  require_shape(p.w_proj->shape(), {d, d}, "attention proj weight");
  const std::size_t hd = d / p.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  BasicTensor<T> qkv =
      linear(x, *p.w_qkv, *p.b_qkv, ctx ? &ctx->qkv_ctx : nullptr, p.qkv_adapter);
  BasicTensor<T> merged({tokens, d});
  if (ctx) ctx->probs.clear();
  for (std::size_t h = 0; h < p.heads; ++h) {
    const BasicTensor<T> q = head_slice(qkv, h * hd, hd);
    const BasicTensor<T> k = head_slice(qkv, d + h * hd, hd);
    const BasicTensor<T> v = head_slice(qkv, 2 * d + h * hd, hd);
    BasicTensor<T> scores = matmul_nt(q, k);
    scale_inplace(scores, scale);
    BasicTensor<T> probs = softmax(scores);
    head_store(merged, matmul(probs, v), h * hd);
    if (ctx) ctx->probs.push_back(std::move(probs));
  }
  BasicTensor<T> y =
      linear(merged, *p.w_proj, *p.b_proj, ctx ? &ctx->proj_ctx : nullptr, p.proj_adapter);
  if (ctx) ctx->qkv = std::move(qkv);
  return y;
}

template <typename T>
AttentionGrads<T> multi_head_attention_backward(AttentionContext<T>& ctx,
                                                const AttentionParams<T>& p,
                                                const BasicTensor<T>& grad, GradRequest request) {
  ctx.consume();
  const std::size_t tokens = ctx.qkv.dim(0);
  const std::size_t d = ctx.qkv.dim(1) / 3;
  const std::size_t hd = d / p.heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  AttentionGrads<T> out;
  GradRequest inner = request;
  inner.input = true;
  out.proj = linear_backward(ctx.proj_ctx, *p.w_proj, grad, p.proj_adapter, inner);
  const BasicTensor<T>& dmerged = out.proj.dx;

  BasicTensor<T> dqkv({tokens, 3 * d});
  for (std::size_t h = 0; h < p.heads; ++h) {
    const BasicTensor<T> q = head_slice(ctx.qkv, h * hd, hd);
    const BasicTensor<T> k = head_slice(ctx.qkv, d + h * hd, hd);
    const BasicTensor<T> v = head_slice(ctx.qkv, 2 * d + h * hd, hd);
    const BasicTensor<T> dout = head_slice(dmerged, h * hd, hd);
    const BasicTensor<T>& probs = ctx.probs[h];

    SoftmaxContext<T> sctx;
    sctx.y = probs;
    BasicTensor<T> dscores = softmax_backward(sctx, matmul_nt(dout, v));
    scale_inplace(dscores, scale);
    head_store(dqkv, matmul(dscores, k), h * hd);
    head_store(dqkv, matmul_tn(dscores, q), d + h * hd);
    head_store(dqkv, matmul_tn(probs, dout), 2 * d + h * hd);
  }
  out.proj.dx = BasicTensor<T>();
  out.qkv = linear_backward(ctx.qkv_ctx, *p.w_qkv, dqkv, p.qkv_adapter, request);
  out.dx = std::move(out.qkv.dx);
  return out;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> patch_embed(const BasicTensor<T>& image, const BasicTensor<T>& w,
                           const BasicTensor<T>& b, std::size_t patch, PatchEmbedContext<T>* ctx) {
  require_rank(image, 3, "patch_embed");
  const std::size_t c = image.dim(0);
  const std::size_t h = image.dim(1);
  const std::size_t wd = image.dim(2);
  if (patch == 0 || h % patch != 0 || wd % patch != 0) {
    fail(ErrorKind::kConfig, "patch size " + std::to_string(patch) + " does not divide image " +
                                 shape_string(image.shape()));
  }
  const std::size_t gh = h / patch;
  const std::size_t gw = wd / patch;
  const std::size_t flat = c * patch * patch;
  BasicTensor<T> patches({gh * gw, flat});
  for (std::size_t pr = 0; pr < gh; ++pr) {
    for (std::size_t pc = 0; pc < gw; ++pc) {
      T* row = patches.data() + (pr * gw + pc) * flat;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < patch; ++i) {
          std::copy_n(image.data() + (ch * h + pr * patch + i) * wd + pc * patch, patch,
                      row + (ch * patch + i) * patch);
        }
      }
    }
  }
  if (ctx) {
    ctx->image_shape = image.shape();
    ctx->patch = patch;
  }
  return linear(patches, w, b, ctx ? &ctx->proj : nullptr);
}

template <typename T>
LinearGrads<T> patch_embed_backward(PatchEmbedContext<T>& ctx, const BasicTensor<T>& w,
                                    const BasicTensor<T>& grad, GradRequest request) {
  ctx.consume();
  LinearGrads<T> out = linear_backward<T>(ctx.proj, w, grad, std::nullopt, request);
  if (request.input) {
    const std::size_t c = ctx.image_shape[0];
    const std::size_t h = ctx.image_shape[1];
    const std::size_t wd = ctx.image_shape[2];
    const std::size_t patch = ctx.patch;
    const std::size_t gw = wd / patch;
    const std::size_t flat = c * patch * patch;
    BasicTensor<T> dimg(ctx.image_shape);
    for (std::size_t t = 0; t < out.dx.dim(0); ++t) {
      const std::size_t pr = t / gw;
      const std::size_t pc = t % gw;
      const T* row = out.dx.data() + t * flat;
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t i = 0; i < patch; ++i) {
          std::copy_n(row + (ch * patch + i) * patch, patch,
                      dimg.data() + (ch * h + pr * patch + i) * wd + pc * patch);
        }
      }
    }
    out.dx = std::move(dimg);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

struct DeconvGeometry {
  std::size_t cin, cout, k, in_h, in_w, out_h, out_w;
};

template <typename T>
DeconvGeometry deconv_geometry(const Shape& x, const BasicTensor<T>& kernel, std::size_t stride,
                               std::size_t pad) {
  require_rank(kernel, 4, "conv_transpose2d kernel");
  if (x.size() != 3 || kernel.dim(0) != x[0]) {
    fail(ErrorKind::kShape, "conv_transpose2d: input " + shape_string(x) + " vs kernel " +
                                shape_string(kernel.shape()));
  }
  const std::size_t k = kernel.dim(2);
  if (kernel.dim(3) != k) fail(ErrorKind::kShape, "conv_transpose2d: kernel must be square");
  if (stride == 0 || k < stride) {
    fail(ErrorKind::kConfig, "conv_transpose2d requires kernel >= stride >= 1");
  }
  const long oh = (static_cast<long>(x[1]) - 1) * static_cast<long>(stride) -
                  2 * static_cast<long>(pad) + static_cast<long>(k);
  const long ow = (static_cast<long>(x[2]) - 1) * static_cast<long>(stride) -
                  2 * static_cast<long>(pad) + static_cast<long>(k);
  if (oh <= 0 || ow <= 0) fail(ErrorKind::kShape, "conv_transpose2d: nonpositive output size");
  return {x[0], kernel.dim(1), k, x[1], x[2], static_cast<std::size_t>(oh),
          static_cast<std::size_t>(ow)};
}

}  // namespace

template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                                const BasicTensor<T>& bias, std::size_t stride, std::size_t pad,
                                ConvContext<T>* ctx) {
  const DeconvGeometry g = deconv_geometry(x.shape(), kernel, stride, pad);
  require_shape(bias.shape(), {g.cout}, "conv_transpose2d bias");
  const std::size_t hw = g.in_h * g.in_w;
  const std::size_t kk = g.k * g.k;
  BasicTensor<T> xm = x.reshaped({g.cin, hw});
  const BasicTensor<T> cols = matmul_tn(kernel.reshaped({g.cin, g.cout * kk}), xm);

  BasicTensor<T> out({g.cout, g.out_h, g.out_w});
  for (std::size_t co = 0; co < g.cout; ++co) {
    T* plane = out.data() + co * g.out_h * g.out_w;
    std::fill_n(plane, g.out_h * g.out_w, bias[co]);
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* col = cols.data() + ((co * g.k + ky) * g.k + kx) * hw;
        for (std::size_t iy = 0; iy < g.in_h; ++iy) {
          const long oy = static_cast<long>(iy * stride + ky) - static_cast<long>(pad);
          if (oy < 0 || oy >= static_cast<long>(g.out_h)) continue;
          for (std::size_t ix = 0; ix < g.in_w; ++ix) {
            const long ox = static_cast<long>(ix * stride + kx) - static_cast<long>(pad);
            if (ox < 0 || ox >= static_cast<long>(g.out_w)) continue;
            plane[oy * static_cast<long>(g.out_w) + ox] += col[iy * g.in_w + ix];
          }
        }
      }
    }
  }
  if (ctx) {
    ctx->x = std::move(xm);
    ctx->height = g.in_h;
    ctx->width = g.in_w;
    ctx->stride = stride;
    ctx->pad = pad;
  }
  return out;
}

template <typename T>
ConvGrads<T> conv_transpose2d_backward(ConvContext<T>& ctx, const BasicTensor<T>& kernel,
                                       const BasicTensor<T>& grad, GradRequest request) {
  ctx.consume();
  const DeconvGeometry g =
      deconv_geometry({ctx.x.dim(0), ctx.height, ctx.width}, kernel, ctx.stride, ctx.pad);
  require_shape(grad.shape(), {g.cout, g.out_h, g.out_w}, "conv_transpose2d grad");
  const std::size_t hw = g.in_h * g.in_w;
  const std::size_t kk = g.k * g.k;

  BasicTensor<T> dcols({g.cout * kk, hw});
  for (std::size_t co = 0; co < g.cout; ++co) {
    const T* plane = grad.data() + co * g.out_h * g.out_w;
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* col = dcols.data() + ((co * g.k + ky) * g.k + kx) * hw;
        for (std::size_t iy = 0; iy < g.in_h; ++iy) {
          const long oy = static_cast<long>(iy * ctx.stride + ky) - static_cast<long>(ctx.pad);
          if (oy < 0 || oy >= static_cast<long>(g.out_h)) continue;
          for (std::size_t ix = 0; ix < g.in_w; ++ix) {
            const long ox = static_cast<long>(ix * ctx.stride + kx) - static_cast<long>(ctx.pad);
            if (ox < 0 || ox >= static_cast<long>(g.out_w)) continue;
            col[iy * g.in_w + ix] = plane[oy * static_cast<long>(g.out_w) + ox];
          }
        }
      }
    }
  }
  ConvGrads<T> out;
  const BasicTensor<T> km = kernel.reshaped({g.cin, g.cout * kk});
  if (request.input) out.dx = matmul(km, dcols).reshaped({g.cin, g.in_h, g.in_w});
  if (request.params) {
    out.dk = matmul_nt(ctx.x, dcols).reshaped(kernel.shape());
    out.db = row_sums(grad.reshaped({g.cout, g.out_h * g.out_w}));
  }
  return out;
}

template <typename T>
BasicTensor<T> conv1x1(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                       const BasicTensor<T>& bias, ConvContext<T>* ctx) {
  require_rank(x, 3, "conv1x1");
  require_rank(kernel, 2, "conv1x1 kernel");
  const std::size_t cin = x.dim(0);
  const std::size_t cout = kernel.dim(0);
  if (kernel.dim(1) != cin) {
    fail(ErrorKind::kShape, "conv1x1: input " + shape_string(x.shape()) + " vs kernel " +
                                shape_string(kernel.shape()));
  }
  require_shape(bias.shape(), {cout}, "conv1x1 bias");
  const std::size_t hw = x.dim(1) * x.dim(2);
  BasicTensor<T> xm = x.reshaped({cin, hw});
  BasicTensor<T> y = matmul(kernel, xm);
  for (std::size_t co = 0; co < cout; ++co) {
    T* row = y.data() + co * hw;
    for (std::size_t i = 0; i < hw; ++i) row[i] += bias[co];
  }
  if (ctx) {
    ctx->height = x.dim(1);
    ctx->width = x.dim(2);
    ctx->x = std::move(xm);
  }
  return y.reshaped({cout, x.dim(1), x.dim(2)});
}

template <typename T>
ConvGrads<T> conv1x1_backward(ConvContext<T>& ctx, const BasicTensor<T>& kernel,
                              const BasicTensor<T>& grad, GradRequest request) {
  ctx.consume();
  const std::size_t cout = kernel.dim(0);
  const std::size_t hw = ctx.height * ctx.width;
  const BasicTensor<T> g = grad.reshaped({cout, hw});
  ConvGrads<T> out;
  if (request.input) out.dx = matmul_tn(kernel, g).reshaped({kernel.dim(1), ctx.height, ctx.width});
  if (request.params) {
    out.dk = matmul_nt(g, ctx.x);
    out.db = row_sums(g);
  }
  return out;
}

// ---------------------------------------------------------------------------

#define MEDPOSE_INSTANTIATE_NN(T)                                                                \
  template void add_inplace<T>(BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> transpose<T>(const BasicTensor<T>&);                                   \
  template BasicTensor<T> matmul<T>(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> matmul_nt<T>(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> matmul_tn<T>(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> linear<T>(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                    const BasicTensor<T>&, LinearContext<T>*,                    \
                                    std::optional<LowRank<T>>);                                  \
  template LinearGrads<T> linear_backward<T>(LinearContext<T>&, const BasicTensor<T>&,           \
                                             const BasicTensor<T>&, std::optional<LowRank<T>>,   \
                                             GradRequest);                                       \
  template BasicTensor<T> layer_norm<T>(const BasicTensor<T>&, const BasicTensor<T>&,            \
                                        const BasicTensor<T>&, T, LayerNormContext<T>*);         \
  template LayerNormGrads<T> layer_norm_backward<T>(LayerNormContext<T>&, const BasicTensor<T>&, \
                                                    const BasicTensor<T>&, GradRequest);         \
  template BasicTensor<T> channel_layer_norm<T>(const BasicTensor<T>&, const BasicTensor<T>&,    \
                                                const BasicTensor<T>&, T,                        \
                                                ChannelNormContext<T>*);                         \
  template LayerNormGrads<T> channel_layer_norm_backward<T>(                                     \
      ChannelNormContext<T>&, const BasicTensor<T>&, const BasicTensor<T>&, GradRequest);        \
  template BasicTensor<T> gelu<T>(const BasicTensor<T>&, GeluContext<T>*);                       \
  template BasicTensor<T> gelu_backward<T>(GeluContext<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> softmax<T>(const BasicTensor<T>&, SoftmaxContext<T>*);                 \
  template BasicTensor<T> softmax_backward<T>(SoftmaxContext<T>&, const BasicTensor<T>&);        \
  template BasicTensor<T> multi_head_attention<T>(const BasicTensor<T>&,                         \
                                                  const AttentionParams<T>&,                     \
                                                  AttentionContext<T>*);                         \
  template AttentionGrads<T> multi_head_attention_backward<T>(                                   \
      AttentionContext<T>&, const AttentionParams<T>&, const BasicTensor<T>&, GradRequest);      \
  template BasicTensor<T> patch_embed<T>(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                         const BasicTensor<T>&, std::size_t,                     \
                                         PatchEmbedContext<T>*);                                 \
  template LinearGrads<T> patch_embed_backward<T>(PatchEmbedContext<T>&, const BasicTensor<T>&,  \
                                                  const BasicTensor<T>&, GradRequest);           \
  template BasicTensor<T> conv_transpose2d<T>(const BasicTensor<T>&, const BasicTensor<T>&,      \
                                              const BasicTensor<T>&, std::size_t, std::size_t,   \
                                              ConvContext<T>*);                                  \
  template ConvGrads<T> conv_transpose2d_backward<T>(ConvContext<T>&, const BasicTensor<T>&,     \
                                                     const BasicTensor<T>&, GradRequest);        \
  template BasicTensor<T> conv1x1<T>(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                     const BasicTensor<T>&, ConvContext<T>*);                    \
  template ConvGrads<T> conv1x1_backward<T>(ConvContext<T>&, const BasicTensor<T>&,              \
                                            const BasicTensor<T>&, GradRequest);

MEDPOSE_INSTANTIATE_NN(float)
MEDPOSE_INSTANTIATE_NN(double)

#undef MEDPOSE_INSTANTIATE_NN

}  // namespace medpose::nn
