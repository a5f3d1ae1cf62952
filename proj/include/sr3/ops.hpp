#pragma once

#include "sr3/rng.hpp"
#include "sr3/tensor.hpp"

namespace sr3::ops {

// Elementwise arithmetic on equal shapes.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> square(const Tensor<T>& a);
/// |x|^p for p >= 1.
template <typename T> Tensor<T> abs_pow(const Tensor<T>& a, T p);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

template <typename T> Tensor<T> silu(const Tensor<T>& x);

/// Inverted dropout: survivors are scaled by 1/(1-p). Identity when
/// !training or p == 0 (no draws are consumed then).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng);

/// Cross-correlation over [N,C,H,W] with kernel [F,C,kH,kW] and bias [F].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias,
                 int stride, int padding);

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, int groups, const Tensor<T>& gain,
                     const Tensor<T>& bias, double eps);

/// Single-head spatial self-attention softmax(QK^T/sqrt(C)) V Wo, where the
/// tokens X are the H*W spatial positions and Q = X Wq etc. No residual.
template <typename T>
Tensor<T> self_attention(const Tensor<T>& x, const Tensor<T>& wq, const Tensor<T>& wk,
                         const Tensor<T>& wv, const Tensor<T>& wo);

enum class Resample { Up, Down };
/// Up: 2x nearest-neighbour replication. Down: 2x2 average pooling.
template <typename T> Tensor<T> resample2(const Tensor<T>& x, Resample direction);

/// Concatenate two [N,*,H,W] tensors along channels (a first).
template <typename T> Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// x[N,I] * w[O,I]^T + b[O].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

/// Feature-wise modulation: x * (1 + scale) + shift, with mod = [scale | shift]
/// of shape [N, 2C] broadcast over H and W.
template <typename T> Tensor<T> film(const Tensor<T>& x, const Tensor<T>& mod);

}  // namespace sr3::ops
