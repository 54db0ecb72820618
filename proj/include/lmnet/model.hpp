#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lmnet/config_text.hpp"
#include "lmnet/ops.hpp"
#include "lmnet/tensor.hpp"

namespace lmnet {

/// The four ablation variants: Plain has neither the dilation pyramid nor
/// skips, Dilation adds the pyramid, Residual adds the skips, Proposed has both.
enum class Variant { Plain, Dilation, Residual, Proposed };

inline constexpr std::array<Variant, 4> kAllVariants = {Variant::Plain, Variant::Dilation, Variant::Residual,
                                                        Variant::Proposed};

std::string_view variant_name(Variant v);
/// Row label used in metric tables, e.g. "Model 1 (Dilation)".
std::string_view variant_title(Variant v);
Variant parse_variant(std::string_view name);
bool uses_pyramid(Variant v);
bool uses_skips(Variant v);

std::string_view loss_name(LossKind k);
LossKind parse_loss(std::string_view name);

struct DropoutSlot {
  int activation = 0;  // 1-based layer whose activation is dropped
  double rate = 0.0;
  friend bool operator==(const DropoutSlot&, const DropoutSlot&) = default;
};

struct GraphConfig {
  std::size_t input_height = 192;
  std::size_t input_width = 192;
  std::size_t input_channels = 3;
  std::vector<std::size_t> channel_sequence{5, 13, 89, 233};
  std::vector<int> dilation_rates{2, 3, 5};
  std::vector<DropoutSlot> dropout_schedule{{4, 0.1}, {5, 0.5}, {6, 0.3}};
  LossKind loss = LossKind::Bce;
  double bn_momentum = 0.1;
  double bn_epsilon = 1e-5;
  std::uint64_t seed = 0;

  /// One message per violated invariant; empty when valid.
  std::vector<std::string> violations(Variant variant) const;
  void validate(Variant variant) const;
  double dropout_rate(int activation) const;

  friend bool operator==(const GraphConfig&, const GraphConfig&) = default;
};

/// Canonical key-value form of (variant, config); see render_key_values.
KeyValues graph_config_to_key_values(Variant variant, const GraphConfig& config);
/// Inverse of graph_config_to_key_values. Unknown keys are rejected.
std::pair<Variant, GraphConfig> graph_config_from_key_values(const KeyValues& kv);

enum class Activation { Relu, Sigmoid };

struct LayerInfo {
  int index = 0;  // 1..9
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;  // after concatenating parallel branches
  std::size_t kernel_size = 3;
  std::vector<int> dilations;  // one entry per parallel kernel
  bool batch_norm = false;
  Activation activation = Activation::Relu;
  double dropout_rate = 0.0;
  bool upsample_input = false;
  int skip_from = 0;  // encoder layer whose output joins the input, 0 if none
  bool pool_output = false;
  std::size_t parameter_count = 0;
};

struct SkipEdge {
  int decoder_layer = 0;
  int encoder_layer = 0;
  friend bool operator==(const SkipEdge&, const SkipEdge&) = default;
};

/// Named view of one parameter or statistic tensor owned by a graph.
template <typename T>
struct ParamRef {
  std::string name;
  Shape shape;
  std::span<T> values;
};

/// One gradient tensor per parameter, in ModelGraph::parameters() order.
template <typename T>
using GradientSet = std::vector<Tensor<T>>;

template <typename T>
class ModelGraph;

template <typename T>
struct UnitTrace {
  std::optional<BatchNormCache<T>> bn;
  Tensor<T> pre_activation;
};

template <typename T>
struct LayerTrace {
  Tensor<T> conv_input;
  std::vector<UnitTrace<T>> units;
  Tensor<T> output_activation;  // kept for the sigmoid adjoint
  Tensor<T> dropout_mask;       // empty when the layer has no dropout
  std::vector<std::size_t> argmax;
  Shape pool_input{};
  std::size_t upsampled_channels = 0;
};

/// Intermediates recorded by a Train-mode forward pass.
template <typename T>
class ForwardCache {
 public:
  bool valid() const { return valid_; }
  std::span<const LayerTrace<T>> layers() const { return layers_; }

 private:
  friend class ModelGraph<T>;
  bool valid_ = false;
  std::uint64_t graph_id_ = 0;
  std::uint64_t version_ = 0;
  Shape prediction_shape_{};
  std::vector<LayerTrace<T>> layers_;
};

template <typename T>
struct ForwardResult {
  Tensor<T> prediction;
  ForwardCache<T> cache;
};

class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Nine-layer U-shaped segmentation network for one variant. Owns its conv
/// parameters and batch-norm state. Eval-mode inference (`infer`) is const
/// and safe to share; Train-mode `forward` updates running statistics.
template <typename T>
class ModelGraph {
 public:
  static constexpr int kConvLayers = 9;

  /// Validates the config and lays out the topology with zeroed weights.
  static ModelGraph build(Variant variant, GraphConfig config);

  /// Kaiming-normal weights (std sqrt(2/fan_in)), zero biases, unit gamma,
  /// zero beta, running mean 0 / var 1. Fully determined by `seed`.
  void init_parameters(std::uint64_t seed);

  Variant variant() const { return variant_; }
  const GraphConfig& config() const { return config_; }
  const std::vector<LayerInfo>& layers() const { return layers_; }
  std::vector<SkipEdge> skip_edges() const;
  std::size_t conv_layer_count() const { return layers_.size(); }
  std::size_t param_count() const;

  std::vector<ParamRef<const T>> parameters() const;
  /// Writable views; any call invalidates outstanding forward caches.
  std::vector<ParamRef<T>> mutable_parameters();
  /// Batch-norm running statistics.
  std::vector<ParamRef<const T>> buffers() const;
  std::vector<ParamRef<T>> mutable_buffers();

  /// When frozen, Train-mode passes normalize with running statistics and
  /// leave them unchanged; dropout still follows the mode.
  void set_batchnorm_frozen(bool frozen) { bn_frozen_ = frozen; }
  bool batchnorm_frozen() const { return bn_frozen_; }

  /// Free-form `train.*` provenance carried through checkpoints.
  const KeyValues& metadata() const { return metadata_; }
  void set_metadata(KeyValues kv) { metadata_ = std::move(kv); }

  ForwardResult<T> forward(const Tensor<T>& batch, Mode mode, Rng& rng);
  Tensor<T> infer(const Tensor<T>& batch) const;

  /// Gradient of the loss w.r.t. every parameter given d(loss)/d(prediction).
  GradientSet<T> backward(const ForwardCache<T>& cache, const Tensor<T>& loss_cotangent) const;

  GradientSet<T> zero_gradients() const;

  template <typename U>
  ModelGraph<U> cast() const;

 private:
  template <typename>
  friend class ModelGraph;

  struct Unit {
    ConvParams<T> conv;
    std::optional<BatchNormState<T>> bn;
  };

  template <typename Self>
  static Tensor<T> run(Self& self, const Tensor<T>& batch, Mode mode, Rng* rng, ForwardCache<T>* cache);

  void check_input(const Tensor<T>& batch) const;

  Variant variant_ = Variant::Proposed;
  GraphConfig config_;
  std::vector<LayerInfo> layers_;
  std::vector<std::vector<Unit>> units_;
  KeyValues metadata_;
  bool bn_frozen_ = false;
  std::uint64_t id_ = 0;
  std::uint64_t version_ = 0;
};

}  // namespace lmnet
