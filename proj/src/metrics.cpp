#include "lmnet/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>
#include <vector>

#include "lmnet/config_text.hpp"

namespace lmnet {

namespace {

double ratio(std::uint64_t num, std::uint64_t den, bool& degenerate) {
  degenerate = den == 0;
  return degenerate ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string split_label(const std::string& split) {
  if (split == "train") return "Train";
  if (split == "test") return "Test";
  if (split == "val") return "Val";
  return split;
}

}  // namespace

template <typename T>
ConfusionCounts confusion(const Tensor<T>& pred, const Tensor<T>& target, double threshold) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("confusion: prediction " + pred.shape().str() + " does not match target " +
                     target.shape().str());
  }
  ConfusionCounts c;
  auto p = pred.data();
  auto t = target.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool positive = static_cast<double>(p[i]) >= threshold;
    if (t[i] == T{1}) {
      ++(positive ? c.tp : c.fn);
    } else if (t[i] == T{0}) {
      ++(positive ? c.fp : c.tn);
    } else {
      throw std::invalid_argument("confusion: target value " + std::to_string(static_cast<double>(t[i])) +
                                  " at index " + std::to_string(i) + " is not binary");
    }
  }
  return c;
}

MetricsReport report(const ConfusionCounts& c, double mean_loss, std::string split, std::size_t samples) {
  MetricsReport r;
  r.split = std::move(split);
  r.samples = samples;
  r.loss = mean_loss;
  r.accuracy = ratio(c.tp + c.tn, c.total(), r.accuracy_degenerate);
  r.precision = ratio(c.tp, c.tp + c.fp, r.precision_degenerate);
  r.recall = ratio(c.tp, c.tp + c.fn, r.recall_degenerate);
  r.iou = ratio(c.tp, c.tp + c.fp + c.fn, r.iou_degenerate);
  return r;
}

std::string render_table(std::span<const TableRow> rows) {
  const std::vector<std::string> header = {"Method", "Train/Test", "Loss", "Accuracy", "IoU", "Precision", "Recall"};
  std::vector<std::vector<std::string>> cells;
  cells.push_back(header);
  for (const TableRow& row : rows) {
    const MetricsReport& m = row.metrics;
    cells.push_back({row.method, split_label(m.split), fixed4(m.loss), fixed4(m.accuracy), fixed4(m.iou),
                     fixed4(m.precision), fixed4(m.recall)});
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  auto rule = [&] {
    std::string s = "+";
    for (std::size_t wdt : width) s += std::string(wdt + 2, '-') + "+";
    return s + "\n";
  };
  std::string out = rule();
  for (std::size_t r = 0; r < cells.size(); ++r) {
    out += "|";
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      const std::string& cell = cells[r][i];
      const std::string pad(width[i] - cell.size(), ' ');
      // Method column left-aligned, numbers right-aligned.
      out += " " + (i < 2 ? cell + pad : pad + cell) + " |";
    }
    out += "\n";
    if (r == 0) out += rule();
  }
  out += rule();
  return out;
}

std::string render_key_values(const MetricsReport& r) {
  KeyValues kv;
  kv["split"] = r.split;
  kv["samples"] = std::to_string(r.samples);
  kv["loss"] = format_float(r.loss);
  kv["accuracy"] = format_float(r.accuracy);
  kv["iou"] = format_float(r.iou);
  kv["precision"] = format_float(r.precision);
  kv["recall"] = format_float(r.recall);
  std::string flags;
  auto flag = [&](bool on, const char* name) {
    if (!on) return;
    if (!flags.empty()) flags += ',';
    flags += name;
  };
  flag(r.accuracy_degenerate, "accuracy");
  flag(r.iou_degenerate, "iou");
  flag(r.precision_degenerate, "precision");
  flag(r.recall_degenerate, "recall");
  kv["degenerate"] = flags.empty() ? "none" : flags;
  return render_key_values(kv);
}

template ConfusionCounts confusion(const Tensor<float>&, const Tensor<float>&, double);
template ConfusionCounts confusion(const Tensor<double>&, const Tensor<double>&, double);

}  // namespace lmnet
