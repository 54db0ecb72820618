#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lmnet/dataset.hpp"
#include "lmnet/metrics.hpp"
#include "lmnet/model.hpp"
#include "lmnet/optimizer.hpp"

namespace lmnet {

struct TrainConfig {
  Variant variant = Variant::Proposed;
  GraphConfig graph;  // graph.seed also drives shuffling and dropout
  std::size_t epochs = 10;
  std::size_t batch_size = 200;
  std::size_t micro_batch = 10;
  AdamConfig adam;
  double threshold = 0.5;
  std::uint64_t max_steps = 0;  // stop after this many optimizer steps; 0 = no cap
  bool dry_run = false;         // count steps, compute nothing
  std::filesystem::path output_dir;   // empty = keep everything in memory
  std::filesystem::path resume_from;  // training-state file to continue from
  std::size_t log_every = 0;          // progress line to stderr every k steps; 0 = silent

  std::vector<std::string> violations() const;
  void validate() const;
};

/// Canonical keys of every setting that influences the numeric trajectory.
KeyValues train_config_to_key_values(const TrainConfig& config);
/// Applies recognised keys over `base`; unknown keys are rejected.
TrainConfig train_config_from_key_values(const KeyValues& kv, TrainConfig base = {});

struct StepRecord {
  std::uint64_t step = 0;  // 1-based optimizer step
  std::uint64_t epoch = 0; // 1-based
  double loss = 0.0;       // mean training loss over the logical batch
  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct EpochRecord {
  std::uint64_t epoch = 0;
  MetricsReport validation;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

/// Aborted runs raise this with the failing step number.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(std::uint64_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::uint64_t step() const { return step_; }

 private:
  std::uint64_t step_;
};

/// Everything needed to continue a run bit-exactly.
struct TrainState {
  ModelGraph<float> graph;
  AdamState<float> adam;
  std::uint64_t epoch = 0;        // 0-based epoch in progress
  std::uint64_t batch = 0;        // next batch within that epoch
  double best_val_loss = std::numeric_limits<double>::infinity();
  TrainHistory history;
};

struct TrainResult {
  std::optional<TrainState> state;  // empty for dry runs
  std::uint64_t steps = 0;
  bool stopped_early = false;
};

/// Sum of per-micro-batch gradients weighted by micro-batch size, divided
/// by the total sample count; also returns the sample-weighted mean loss.
/// Dropout in micro-batch k draws from an Rng seeded with (seed, step, k).
template <typename T>
struct BatchGradients {
  GradientSet<T> grads;
  double loss = 0.0;
};

template <typename T>
BatchGradients<T> batch_gradients(ModelGraph<T>& graph, const Tensor<T>& images, const Tensor<T>& masks,
                                  std::size_t micro_batch, std::uint64_t seed, std::uint64_t step);

Rng micro_batch_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t micro);

/// Optimizer steps a run of `epochs` over `train_count` samples performs.
std::uint64_t planned_steps(std::size_t train_count, std::size_t batch_size, std::size_t epochs,
                            std::uint64_t max_steps = 0);

/// Called after every optimizer step; returning false stops the run there
/// (state and logs are saved exactly as for max_steps).
using StepObserver = std::function<bool(const TrainState&, const StepRecord&)>;

TrainResult train(const TrainConfig& config, std::span<const ImagePair> train_set, std::span<const ImagePair> val_set,
                  const StepObserver& observer = {});

/// Loads the train and val splits from an index (only counts for dry runs).
TrainResult train_from_index(const TrainConfig& config, const std::filesystem::path& index_file,
                             const StepObserver& observer = {});

/// Eval-mode pass over `samples` in chunks of `micro_batch`.
MetricsReport evaluate(const ModelGraph<float>& graph, std::span<const ImagePair> samples, const std::string& split,
                       double threshold = 0.5, std::size_t micro_batch = 10);

std::string encode_train_state(const TrainConfig& config, const TrainState& state);
/// Returns the stored config (as key-values) and state.
std::pair<KeyValues, TrainState> decode_train_state(std::string_view bytes);

std::string steps_csv(const TrainHistory& history);
std::string validation_csv(const TrainHistory& history);

}  // namespace lmnet
