#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "lmnet/model.hpp"

namespace lmnet {

/// Error of an analytic gradient tensor against central differences:
/// max |a - n| / max(max |a|, max |n|, floor).
struct GradCheckRow {
  std::string name;
  std::size_t size = 0;
  double max_abs_error = 0.0;
  double max_abs_gradient = 0.0;
  double relative_error = 0.0;
  bool pass = false;
};

double gradient_relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric,
                               double floor, double* max_abs_error = nullptr, double* max_abs_gradient = nullptr);

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  std::size_t batch = 2;
  std::uint64_t seed = 7;
  /// Lower bound on the denominator, as a fraction of the largest gradient
  /// entry across all tensors. Keeps tensors whose true gradient is zero
  /// (a conv bias feeding batch norm) from dividing noise by noise.
  double relative_floor = 1e-4;
};

/// Tiny default graph for the 64-bit check: channels [2,2,3,3], 8x8 input.
GraphConfig gradcheck_graph_config();

/// Finite-difference check of every parameter tensor of a 64-bit graph
/// under the configured loss, with dropout masks held fixed.
std::vector<GradCheckRow> gradcheck_model(Variant variant, const GraphConfig& config,
                                          const GradCheckOptions& options = {});

}  // namespace lmnet
