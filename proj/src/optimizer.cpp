#include "lmnet/optimizer.hpp"

#include <cmath>

namespace lmnet {

std::vector<std::string> AdamConfig::violations() const {
  std::vector<std::string> out;
  if (!(lr > 0.0) || !std::isfinite(lr)) out.push_back("lr must be a positive finite number, got " + format_float(lr));
  if (!(beta1 >= 0.0 && beta1 < 1.0)) out.push_back("beta1 must lie in [0,1), got " + format_float(beta1));
  if (!(beta2 >= 0.0 && beta2 < 1.0)) out.push_back("beta2 must lie in [0,1), got " + format_float(beta2));
  if (!(epsilon > 0.0)) out.push_back("adam_eps must be positive, got " + format_float(epsilon));
  return out;
}

template <typename T>
AdamState<T> adam_init(std::span<const Shape> shapes, AdamConfig config) {
  AdamState<T> s;
  s.config = config;
  for (const Shape& sh : shapes) {
    s.m.emplace_back(sh);
    s.v.emplace_back(sh);
  }
  return s;
}

template <typename T>
AdamState<T> adam_init(const ModelGraph<T>& graph, AdamConfig config) {
  std::vector<Shape> shapes;
  for (const auto& p : graph.parameters()) shapes.push_back(p.shape);
  return adam_init<T>(std::span<const Shape>(shapes), config);
}

template <typename T>
void adam_step(std::span<const ParamRef<T>> params, const GradientSet<T>& grads, AdamState<T>& state) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ShapeError("adam_step: " + std::to_string(grads.size()) + " gradients and " +
                     std::to_string(state.m.size()) + " moment tensors for " + std::to_string(params.size()) +
                     " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape || state.m[i].shape() != params[i].shape) {
      throw ShapeError("adam_step: gradient " + grads[i].shape().str() + " does not match parameter '" +
                       params[i].name + "' " + params[i].shape.str());
    }
    for (T g : grads[i].data()) {
      if (!std::isfinite(g)) {
        throw StepRejected("adam_step: non-finite gradient in '" + params[i].name + "' at step " +
                           std::to_string(state.step + 1));
      }
    }
  }

  const AdamConfig& c = state.config;
  const std::uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i].values;
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double gj = g[j];
      const double mj = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      const double vj = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      theta[j] = static_cast<T>(theta[j] - c.lr * (mj / bc1) / (std::sqrt(vj / bc2) + c.epsilon));
    }
  }
  state.step = t;
}

template <typename T>
void adam_step(ModelGraph<T>& graph, const GradientSet<T>& grads, AdamState<T>& state) {
  const auto params = graph.mutable_parameters();
  adam_step<T>(std::span<const ParamRef<T>>(params), grads, state);
}

template AdamState<float> adam_init<float>(std::span<const Shape>, AdamConfig);
template AdamState<double> adam_init<double>(std::span<const Shape>, AdamConfig);
template AdamState<float> adam_init(const ModelGraph<float>&, AdamConfig);
template AdamState<double> adam_init(const ModelGraph<double>&, AdamConfig);
template void adam_step(std::span<const ParamRef<float>>, const GradientSet<float>&, AdamState<float>&);
template void adam_step(std::span<const ParamRef<double>>, const GradientSet<double>&, AdamState<double>&);
template void adam_step(ModelGraph<float>&, const GradientSet<float>&, AdamState<float>&);
template void adam_step(ModelGraph<double>&, const GradientSet<double>&, AdamState<double>&);

}  // namespace lmnet
