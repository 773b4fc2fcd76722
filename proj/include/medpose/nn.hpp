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

#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "medpose/tensor.hpp"

// Differentiable building blocks. Each primitive has a forward that optionally
// records a context, and a backward that consumes that context (at most once)
// and returns gradients for its inputs and parameters. Reductions run in a
// fixed row-major order so identical inputs give bit-identical outputs.
namespace medpose::nn {

/// Which gradients a backward call should produce.
struct GradRequest {
  bool input = true;
  bool params = true;   // dense weights, biases, norm affine terms
  bool adapter = true;  // low-rank adapter factors
};

class Context {
 public:
  void consume();
  bool consumed() const noexcept { return consumed_; }

 private:
  bool consumed_ = false;
};

// ---------------------------------------------------------------------------
// Matrix products on rank-2 tensors.

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);  // a b
template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b);  // a b^T
template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b);  // a^T b
template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

// ---------------------------------------------------------------------------
// Dense layer with an optional low-rank adapter:
//   y = x W^T + b + scale * (x A^T) B^T

template <typename T>
struct LowRank {
  const BasicTensor<T>* a = nullptr;  // (r, din)
  const BasicTensor<T>* b = nullptr;  // (dout, r)
  T scale = T(1);
};

template <typename T>
struct LinearContext : Context {
  Shape input_shape;
  BasicTensor<T> x;  // (M, din)
  BasicTensor<T> u;  // (M, r), adapter activations
};

template <typename T>
struct LinearGrads {
  BasicTensor<T> dx, dw, db;
  BasicTensor<T> da, db_lora;  // adapter factors, when present
};

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      LinearContext<T>* ctx = nullptr,
                      std::optional<LowRank<T>> adapter = std::nullopt);

template <typename T>
LinearGrads<T> linear_backward(LinearContext<T>& ctx, const BasicTensor<T>& w,
                               const BasicTensor<T>& grad,
                               std::optional<LowRank<T>> adapter = std::nullopt,
                               GradRequest request = {});

// ---------------------------------------------------------------------------

template <typename T>
struct LayerNormContext : Context {
  BasicTensor<T> xhat;  // (M, d)
  std::vector<T> rstd;
};

template <typename T>
struct LayerNormGrads {
  BasicTensor<T> dx, dgamma, dbeta;
};

/// Normalizes over the last axis (biased variance), then applies gamma/beta.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, T eps, LayerNormContext<T>* ctx = nullptr);

template <typename T>
LayerNormGrads<T> layer_norm_backward(LayerNormContext<T>& ctx, const BasicTensor<T>& gamma,
                                      const BasicTensor<T>& grad, GradRequest request = {});

/// Layer norm over the channel axis of a (C, H, W) map, per pixel.
template <typename T>
struct ChannelNormContext : Context {
  LayerNormContext<T> inner;
  Shape shape;
};

template <typename T>
BasicTensor<T> channel_layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                                  const BasicTensor<T>& beta, T eps,
                                  ChannelNormContext<T>* ctx = nullptr);

template <typename T>
LayerNormGrads<T> channel_layer_norm_backward(ChannelNormContext<T>& ctx,
                                              const BasicTensor<T>& gamma,
                                              const BasicTensor<T>& grad,
                                              GradRequest request = {});

// ---------------------------------------------------------------------------

template <typename T>
struct GeluContext : Context {
  BasicTensor<T> x;
};

/// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x, GeluContext<T>* ctx = nullptr);

template <typename T>
BasicTensor<T> gelu_backward(GeluContext<T>& ctx, const BasicTensor<T>& grad);

// ---------------------------------------------------------------------------

template <typename T>
struct SoftmaxContext : Context {
  BasicTensor<T> y;
};

/// Max-subtracted softmax over the last axis.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& x, SoftmaxContext<T>* ctx = nullptr);

template <typename T>
BasicTensor<T> softmax_backward(SoftmaxContext<T>& ctx, const BasicTensor<T>& grad);

// ---------------------------------------------------------------------------

template <typename T>
struct AttentionParams {
  const BasicTensor<T>* w_qkv;   // (3d, d)
  const BasicTensor<T>* b_qkv;   // (3d)
  const BasicTensor<T>* w_proj;  // (d, d)
  const BasicTensor<T>* b_proj;  // (d)
  std::size_t heads = 1;
  std::optional<LowRank<T>> qkv_adapter;
  std::optional<LowRank<T>> proj_adapter;
};

template <typename T>
struct AttentionContext : Context {
  LinearContext<T> qkv_ctx;
  LinearContext<T> proj_ctx;
  BasicTensor<T> qkv;               // (T, 3d)
  std::vector<BasicTensor<T>> probs;  // per head (T, T)
};

template <typename T>
struct AttentionGrads {
  BasicTensor<T> dx;
  LinearGrads<T> qkv;
  LinearGrads<T> proj;
};

/// Scaled dot-product self-attention over (T, d) tokens with `heads` heads.
template <typename T>
BasicTensor<T> multi_head_attention(const BasicTensor<T>& x, const AttentionParams<T>& p,
                                    AttentionContext<T>* ctx = nullptr);

template <typename T>
AttentionGrads<T> multi_head_attention_backward(AttentionContext<T>& ctx,
                                                const AttentionParams<T>& p,
                                                const BasicTensor<T>& grad,
                                                GradRequest request = {});

// ---------------------------------------------------------------------------

template <typename T>
struct PatchEmbedContext : Context {
  LinearContext<T> proj;
  Shape image_shape;
  std::size_t patch = 1;
};

/// (C, H, W) image -> ((H/p)(W/p), d) tokens; patches flatten as (c, row, col).
template <typename T>
BasicTensor<T> patch_embed(const BasicTensor<T>& image, const BasicTensor<T>& w,
                           const BasicTensor<T>& b, std::size_t patch,
                           PatchEmbedContext<T>* ctx = nullptr);

template <typename T>
LinearGrads<T> patch_embed_backward(PatchEmbedContext<T>& ctx, const BasicTensor<T>& w,
                                    const BasicTensor<T>& grad, GradRequest request = {});

// ---------------------------------------------------------------------------

template <typename T>
struct ConvContext : Context {
  BasicTensor<T> x;  // (Cin, H*W)
  std::size_t height = 0, width = 0;
  std::size_t stride = 1, pad = 0;
};

template <typename T>
struct ConvGrads {
  BasicTensor<T> dx, dk, db;
};

/// out[co, iy*s - pad + ky, ix*s - pad + kx] += x[ci, iy, ix] * k[ci, co, ky, kx].
/// With k=4, s=2, pad=1 the output is exactly (2H, 2W).
template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                                const BasicTensor<T>& bias, std::size_t stride, std::size_t pad,
                                ConvContext<T>* ctx = nullptr);

template <typename T>
ConvGrads<T> conv_transpose2d_backward(ConvContext<T>& ctx, const BasicTensor<T>& kernel,
                                       const BasicTensor<T>& grad, GradRequest request = {});

template <typename T>
BasicTensor<T> conv1x1(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                       const BasicTensor<T>& bias, ConvContext<T>* ctx = nullptr);

template <typename T>
ConvGrads<T> conv1x1_backward(ConvContext<T>& ctx, const BasicTensor<T>& kernel,
                              const BasicTensor<T>& grad, GradRequest request = {});

// ---------------------------------------------------------------------------

template <typename T>
void add_inplace(BasicTensor<T>& acc, const BasicTensor<T>& x);

}  // namespace medpose::nn
