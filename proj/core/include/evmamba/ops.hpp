#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "evmamba/tensor.hpp"

namespace evm {

enum class OpKind { add, sub, mul, exp, sigmoid, silu, softplus, relu };

/// Element-wise op. Binary kinds require equal shapes or a single-element
/// operand (scalar broadcast); unary kinds take `b == nullptr`.
Tensor elementwise(OpKind kind, const Tensor& a, const Tensor* b = nullptr);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double factor);

/// [M×K]·[K×N] -> [M×N].
Tensor matmul(const Tensor& a, const Tensor& b);

/// x[M×K]·w[K×N] (+ bias[N] per row).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor* bias = nullptr);

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// x[C_in×H×W], w[C_out×(C_in/groups)×k×k], optional bias[C_out].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, Conv2dOptions opt);

enum class ReduceKind { sum, mean };

/// Reduces over the listed axes; the reduced axes are removed (a full
/// reduction yields shape [1]).
Tensor reduce(ReduceKind kind, const Tensor& x, std::span<const std::size_t> axes);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Global average pool: [C×H×W] -> [C].
Tensor global_avg_pool(const Tensor& x);

/// Copying reshape; element count must match.
Tensor reshape(const Tensor& x, Shape shape);

/// out[c,h,w] = x[c,h,w] * g[c].
Tensor channel_scale(const Tensor& x, const Tensor& g);

/// Normalizes each pixel of x[C×H×W] across channels, then applies the
/// per-channel affine weight and bias.
Tensor layer_norm_channels(const Tensor& x, const Tensor& weight, const Tensor& bias, double eps = 1e-5);

/// Row-wise softmax / log-softmax of a [B×K] tensor.
Tensor softmax(const Tensor& logits);
Tensor log_softmax(const Tensor& logits);

/// Mean negative log-likelihood of `labels` under softmax(logits[B×K]).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Stacks equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);

/// Slice `index` of the leading axis (copy).
Tensor select(const Tensor& x, std::size_t index);

/// Reads the pixels listed in `pixels` (flat indices into H·W) of x[C×H×W].
/// Token-major output is [L×C]; otherwise [C×out_h×out_w] with
/// out_h·out_w == L.
Tensor spatial_take(const Tensor& x, std::span<const std::size_t> pixels, bool token_major, std::size_t out_h = 0,
                    std::size_t out_w = 0);

/// Inverse of spatial_take over a set of parts: writes each part's values to
/// its listed pixels of a zero [C×H×W] canvas, summing on overlap.
Tensor spatial_merge(std::span<const Tensor> parts, std::span<const std::vector<std::size_t>> pixels,
                     bool token_major, std::size_t channels, std::size_t height, std::size_t width);

}  // namespace evm
