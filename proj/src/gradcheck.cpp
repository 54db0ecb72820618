#include "lmnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace lmnet {

double gradient_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric, double floor,
                               double* max_abs_error, double* max_abs_gradient) {
  double err = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    err = std::max(err, std::abs(analytic[i] - numeric[i]));
    scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  if (max_abs_error) *max_abs_error = err;
  if (max_abs_gradient) *max_abs_gradient = scale;
  const double denom = std::max(scale, floor);
  return denom > 0.0 ? err / denom : 0.0;
}

GraphConfig gradcheck_graph_config() {
  GraphConfig c;
  c.input_height = 8;
  c.input_width = 8;
  c.channel_sequence = {2, 2, 3, 3};
  return c;
}

std::vector<GradCheckRow> gradcheck_model(Variant variant, const GraphConfig& config, const GradCheckOptions& options) {
  ModelGraph<double> graph = ModelGraph<double>::build(variant, config);
  graph.init_parameters(options.seed);

  Rng data_rng(options.seed + 1);
  // Zero biases put dead-ReLU pixels exactly on the next ReLU kink.
  for (const ParamRef<double>& p : graph.mutable_parameters()) {
    const bool is_bias = p.name.ends_with(".bias") || p.name.ends_with(".beta");
    const bool is_gamma = p.name.ends_with(".gamma");
    if (!is_bias && !is_gamma) continue;
    for (double& v : p.values) v = (is_gamma ? 1.0 : 0.0) + 0.2 * (uniform01(data_rng) - 0.5);
  }
  Tensor<double> input({options.batch, config.input_channels, config.input_height, config.input_width});
  for (double& v : input.data()) v = uniform01(data_rng);
  Tensor<double> target({options.batch, 1, config.input_height, config.input_width});
  for (double& v : target.data()) v = uniform01(data_rng) < 0.3 ? 1.0 : 0.0;

  const std::uint64_t dropout_seed = options.seed + 2;
  auto loss_at = [&]() {
    Rng rng(dropout_seed);
    return loss_value(config.loss, graph.forward(input, Mode::Train, rng).prediction, target);
  };

  GradientSet<double> analytic;
  {
    Rng rng(dropout_seed);
    ForwardResult<double> fr = graph.forward(input, Mode::Train, rng);
    analytic = graph.backward(fr.cache, loss_gradient(config.loss, fr.prediction, target));
  }

  std::vector<std::vector<double>> numeric;
  std::vector<std::string> names;
  const auto params = graph.mutable_parameters();
  for (const ParamRef<double>& p : params) {
    names.push_back(p.name);
    std::vector<double> n(p.values.size());
    for (std::size_t j = 0; j < p.values.size(); ++j) {
      const double saved = p.values[j];
      p.values[j] = saved + options.step;
      const double plus = loss_at();
      p.values[j] = saved - options.step;
      const double minus = loss_at();
      p.values[j] = saved;
      n[j] = (plus - minus) / (2.0 * options.step);
    }
    numeric.push_back(std::move(n));
  }

  double global = 0.0;
  for (const auto& g : analytic) {
    for (double v : g.data()) global = std::max(global, std::abs(v));
  }
  std::vector<GradCheckRow> rows;
  for (std::size_t i = 0; i < names.size(); ++i) {
    GradCheckRow row;
    row.name = names[i];
    row.size = numeric[i].size();
    const std::vector<double> a(analytic[i].data().begin(), analytic[i].data().end());
    row.relative_error = gradient_relative_error(a, numeric[i], options.relative_floor * global, &row.max_abs_error,
                                                 &row.max_abs_gradient);
    row.pass = row.relative_error < options.tolerance;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace lmnet
