#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "lmnet/tensor.hpp"

namespace lmnet {

enum class Mode { Train, Eval };

using Rng = std::mt19937_64;

/// Uniform draw in [0, 1) built from the top 53 bits, independent of the
/// standard library's distribution implementations.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Convolution weights (c_out, c_in, k, k), bias (c_out), and dilation.
/// Kernel size must be odd so zero same-padding is symmetric.
template <typename T>
class ConvParams {
 public:
  ConvParams(Tensor<T> weights, std::vector<T> bias, int dilation);

  const Tensor<T>& weights() const { return weights_; }
  const std::vector<T>& bias() const { return bias_; }
  std::span<T> weight_values() { return weights_.data(); }
  std::span<T> bias_values() { return bias_; }

  int dilation() const { return dilation_; }
  std::size_t kernel_size() const { return weights_.h(); }
  std::size_t in_channels() const { return weights_.c(); }
  std::size_t out_channels() const { return weights_.n(); }

 private:
  Tensor<T> weights_;
  std::vector<T> bias_;
  int dilation_ = 1;
};

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  std::vector<T> bias;
};

/// Same-padded dilated convolution, stride 1:
/// out(b,o,y,x) = bias(o) + sum_{i,u,v} in(b,i,y+d(u-k/2),x+d(v-k/2)) w(o,i,u,v),
/// out-of-range taps read zero. Terms are summed in (i,u,v) order after the bias.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const ConvParams<T>& params);

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const ConvParams<T>& params, const Tensor<T>& grad_out);

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::size_t> argmax;  // flat input index of each window's winner
};

/// 2x2 stride-2 max pooling; ties go to the first element in row-major window order.
template <typename T>
PoolResult<T> maxpool2(const Tensor<T>& input);

template <typename T>
Tensor<T> maxpool2_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                            const Shape& input_shape);

template <typename T>
Tensor<T> upsample_nearest2(const Tensor<T>& input);

/// Transpose of upsample_nearest2: sums each 2x2 output block into its source.
template <typename T>
Tensor<T> upsample_nearest2_backward(const Tensor<T>& grad_out);

template <typename T>
class BatchNormState {
 public:
  BatchNormState(std::size_t channels, double momentum, double epsilon);

  std::size_t channels() const { return gamma.size(); }
  double momentum() const { return momentum_; }
  double epsilon() const { return epsilon_; }

  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;

 private:
  double momentum_;
  double epsilon_;
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::Train;
  Tensor<T> normalized;      // x-hat
  std::vector<T> inv_std;    // per channel, from batch or running statistics
};

template <typename T>
struct BatchNormResult {
  Tensor<T> output;
  BatchNormCache<T> cache;
};

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

/// Train mode normalizes by biased batch statistics over (n, h, w) and blends
/// them into the running statistics; Eval mode uses the running statistics.
template <typename T>
BatchNormResult<T> batchnorm(const Tensor<T>& input, BatchNormState<T>& state, Mode mode);

/// Eval-mode normalization against a read-only state.
template <typename T>
BatchNormResult<T> batchnorm(const Tensor<T>& input, const BatchNormState<T>& state);

template <typename T>
BatchNormGrads<T> batchnorm_backward(const Tensor<T>& grad_out, const BatchNormState<T>& state,
                                     const BatchNormCache<T>& cache);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& input, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);
/// Takes the forward output s; the local derivative is s(1-s).
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out);

template <typename T>
struct DropoutResult {
  Tensor<T> output;
  Tensor<T> mask;  // 0 or 1/(1-rate) per element
};

/// Inverted dropout. Eval mode and rate 0 return the input with an all-ones mask.
template <typename T>
DropoutResult<T> dropout(const Tensor<T>& input, double rate, Rng& rng, Mode mode);
template <typename T>
Tensor<T> dropout_backward(const Tensor<T>& grad_out, const Tensor<T>& mask);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Splits along channels at `first_channels`; the adjoint of concat_channels.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> split_channels(const Tensor<T>& t, std::size_t first_channels);

enum class LossKind { Bce, Mse };

inline constexpr double kBceClip = 1e-7;

/// Mean binary cross-entropy with predictions clamped to [1e-7, 1-1e-7].
template <typename T>
double bce_loss(const Tensor<T>& pred, const Tensor<T>& target);
template <typename T>
Tensor<T> bce_loss_backward(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
double mse_loss(const Tensor<T>& pred, const Tensor<T>& target);
template <typename T>
Tensor<T> mse_loss_backward(const Tensor<T>& pred, const Tensor<T>& target);

template <typename T>
double loss_value(LossKind kind, const Tensor<T>& pred, const Tensor<T>& target) {
  return kind == LossKind::Bce ? bce_loss(pred, target) : mse_loss(pred, target);
}

template <typename T>
Tensor<T> loss_gradient(LossKind kind, const Tensor<T>& pred, const Tensor<T>& target) {
  return kind == LossKind::Bce ? bce_loss_backward(pred, target) : mse_loss_backward(pred, target);
}

}  // namespace lmnet
