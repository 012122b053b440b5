#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "msbwe/ad/tensor.hpp"
#include "msbwe/dsp.hpp"

namespace msbwe::ad {

// ---- element-wise ------------------------------------------------------------
// Binary ops require identical shapes; there is no broadcasting.

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T offset);
template <typename T> Tensor<T> square(const Tensor<T>& x);
template <typename T> Tensor<T> exp(const Tensor<T>& x);
template <typename T> Tensor<T> sin(const Tensor<T>& x);
template <typename T> Tensor<T> cos(const Tensor<T>& x);
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.1));
// Exact form x * Phi(x).
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
// |x - 2 pi round(x / 2 pi)|, the principal absolute angle.
template <typename T> Tensor<T> anti_wrap_abs(const Tensor<T>& x);
// atan2(imag, real) in (-pi, pi]; value and gradient are 0 where both inputs are 0.
template <typename T> Tensor<T> arctan2_phase(const Tensor<T>& pseudo_imag, const Tensor<T>& pseudo_real);

// ---- reductions and shape ----------------------------------------------------

template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis);
// First difference along `axis`; that dimension shrinks by one.
template <typename T> Tensor<T> diff(const Tensor<T>& x, std::size_t axis);
// Mean over every axis but the first: [B, ...] -> [B].
template <typename T> Tensor<T> mean_per_sample(const Tensor<T>& x);

// ---- neural primitives -------------------------------------------------------

struct ConvSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_size = 1;
    std::size_t stride = 1;
    std::size_t dilation = 1;
    std::size_t groups = 1;
    std::size_t padding = 0;

    bool depthwise() const { return groups == in_channels && groups == out_channels; }
    std::size_t output_length(std::size_t length) const;
    void validate() const;
};

struct ConvSpec2D {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_h = 1, kernel_w = 1;
    std::size_t stride_h = 1, stride_w = 1;
    std::size_t dilation_h = 1, dilation_w = 1;
    std::size_t padding_h = 0, padding_w = 0;
    std::size_t groups = 1;

    std::size_t output_h(std::size_t h) const;
    std::size_t output_w(std::size_t w) const;
    void validate() const;
};

// x: [B, C_in, T], w: [C_out, C_in / groups, K], b: [C_out] -> [B, C_out, T'].
// Zero padding, cross-correlation.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec& spec);

// x: [B, C_in, H, W], w: [C_out, C_in / groups, KH, KW], b: [C_out].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvSpec2D& spec);

// Normalises over dimension `axis` (size C) independently at every other index:
// (x - mean) / sqrt(var + eps) * gamma + beta, with gamma/beta of shape [C].
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, std::size_t axis,
                     T eps = T(1e-6));

// Global response normalisation on [B, C, T] with the residual term:
// g_c = ||x_c||_2 over T, n_c = g_c / (mean_c g + eps), out = gamma * x * n + beta + x.
template <typename T>
Tensor<T> grn(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-6));

// Differentiable inverse STFT of [B, F, T] real/imaginary grids to [B, L]
// waveforms, matching dsp::istft sample for sample.
template <typename T>
Tensor<T> istft(const Tensor<T>& real, const Tensor<T>& imag, const dsp::StftConfig& cfg,
                std::optional<std::size_t> length = std::nullopt);

// ---- gradient checking ---------------------------------------------------------

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// Compares analytic gradients of sum(w * op(inputs)) for a fixed random w
// against central differences, over every element of every input that
// requires grad. Relative error falls back to absolute error when both
// gradients are below 1e-6 in magnitude.
GradCheckResult grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& op,
                           const std::vector<Tensor<double>>& inputs, double perturbation = 1e-5,
                           unsigned seed = 1234);

}  // namespace msbwe::ad
