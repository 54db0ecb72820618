#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "lmnet/tensor.hpp"

namespace lmnet {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// A pixel is predicted positive iff pred >= threshold. Target must be {0,1}.
template <typename T>
ConfusionCounts confusion(const Tensor<T>& pred, const Tensor<T>& target, double threshold = 0.5);

/// Pooled (micro-averaged) metrics for one split. A ratio whose denominator
/// is zero is reported as 0 and flagged.
struct MetricsReport {
  std::string split;
  std::size_t samples = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double iou = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool accuracy_degenerate = false;
  bool iou_degenerate = false;
  bool precision_degenerate = false;
  bool recall_degenerate = false;

  bool degenerate() const {
    return accuracy_degenerate || iou_degenerate || precision_degenerate || recall_degenerate;
  }
};

MetricsReport report(const ConfusionCounts& counts, double mean_loss, std::string split, std::size_t samples);

struct TableRow {
  std::string method;
  MetricsReport metrics;
};

/// Aligned text table: Method | Train/Test | Loss | Accuracy | IoU | Precision | Recall.
std::string render_table(std::span<const TableRow> rows);

/// One `key=value` per line: split, samples, loss, accuracy, iou, precision,
/// recall, degenerate.
std::string render_key_values(const MetricsReport& r);

}  // namespace lmnet
