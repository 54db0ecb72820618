#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmnet/model.hpp"

namespace lmnet {

struct AdamConfig {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  std::vector<std::string> violations() const;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

/// Raised when a gradient holds NaN/Inf; the optimizer state and the
/// parameters are left exactly as they were.
class StepRejected : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor<T>> m;  // first moments, one per parameter tensor
  std::vector<Tensor<T>> v;  // second moments
};

template <typename T>
AdamState<T> adam_init(std::span<const Shape> shapes, AdamConfig config = {});

template <typename T>
AdamState<T> adam_init(const ModelGraph<T>& graph, AdamConfig config = {});

/// t <- t+1; m <- b1 m + (1-b1) g; v <- b2 v + (1-b2) g^2;
/// theta <- theta - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
template <typename T>
void adam_step(std::span<const ParamRef<T>> params, const GradientSet<T>& grads, AdamState<T>& state);

template <typename T>
void adam_step(ModelGraph<T>& graph, const GradientSet<T>& grads, AdamState<T>& state);

}  // namespace lmnet
