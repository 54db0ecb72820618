#include "lmnet/model.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <set>
#include <type_traits>

namespace lmnet {

namespace {

std::atomic<std::uint64_t> next_graph_id{1};

template <typename T>
Tensor<T> channel_slice(const Tensor<T>& t, std::size_t begin, std::size_t count) {
  const Shape s = t.shape();
  Tensor<T> out({s.n, count, s.h, s.w});
  for (std::size_t b = 0; b < s.n; ++b) {
    std::copy_n(t.plane(b, begin), count * s.plane(), out.plane(b, 0));
  }
  return out;
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& x) {
  if (acc.shape() != x.shape()) {
    throw ShapeError("gradient accumulation: " + acc.shape().str() + " vs " + x.shape().str());
  }
  auto a = acc.data();
  auto b = x.data();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

std::string layer_prefix(int layer, std::size_t branch, std::size_t branches) {
  std::string p = "layer" + std::to_string(layer);
  if (branches > 1) p += ".branch" + std::to_string(branch);
  return p;
}

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Plain: return "plain";
    case Variant::Dilation: return "dilation";
    case Variant::Residual: return "residual";
    case Variant::Proposed: return "proposed";
  }
  return "unknown";
}

std::string_view variant_title(Variant v) {
  switch (v) {
    case Variant::Plain: return "Model 0 (Plain)";
    case Variant::Dilation: return "Model 1 (Dilation)";
    case Variant::Residual: return "Model 2 (Residual)";
    case Variant::Proposed: return "Proposed Method";
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) + "'; valid names: plain, dilation, residual, proposed");
}

bool uses_pyramid(Variant v) { return v == Variant::Dilation || v == Variant::Proposed; }
bool uses_skips(Variant v) { return v == Variant::Residual || v == Variant::Proposed; }

std::string_view loss_name(LossKind k) { return k == LossKind::Bce ? "bce" : "mse"; }

LossKind parse_loss(std::string_view name) {
  if (name == "bce") return LossKind::Bce;
  if (name == "mse") return LossKind::Mse;
  throw ConfigError("unknown loss '" + std::string(name) + "'; valid names: bce, mse");
}

std::vector<std::string> GraphConfig::violations(Variant variant) const {
  std::vector<std::string> out;
  if (channel_sequence.size() != 4) {
    out.push_back("channel_sequence must have exactly 4 entries, got " + std::to_string(channel_sequence.size()));
  }
  for (std::size_t c : channel_sequence) {
    if (c < 1) {
      out.push_back("channel_sequence entries must be >= 1");
      break;
    }
  }
  if (uses_pyramid(variant) && dilation_rates.size() != 3) {
    out.push_back("dilation_rates must have exactly 3 entries for the " + std::string(variant_name(variant)) +
                  " variant, got " + std::to_string(dilation_rates.size()));
  }
  for (int d : dilation_rates) {
    if (d < 1) {
      out.push_back("dilation_rates entries must be >= 1");
      break;
    }
  }
  if (input_height == 0 || input_height % 8 != 0) {
    out.push_back("input height " + std::to_string(input_height) + " must be a positive multiple of 8");
  }
  if (input_width == 0 || input_width % 8 != 0) {
    out.push_back("input width " + std::to_string(input_width) + " must be a positive multiple of 8");
  }
  if (input_channels < 1) out.push_back("input_channels must be >= 1");
  std::set<int> seen;
  for (const DropoutSlot& d : dropout_schedule) {
    if (d.activation < 1 || d.activation > 8) {
      out.push_back("dropout activation index " + std::to_string(d.activation) + " must lie in 1..8");
    }
    if (!(d.rate >= 0.0 && d.rate < 1.0)) {
      out.push_back("dropout rate " + format_float(d.rate) + " must lie in [0,1)");
    }
    if (!seen.insert(d.activation).second) {
      out.push_back("dropout activation index " + std::to_string(d.activation) + " listed twice");
    }
  }
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) out.push_back("bn_momentum must lie in (0,1)");
  if (!(bn_epsilon > 0.0)) out.push_back("bn_epsilon must be positive");
  return out;
}

void GraphConfig::validate(Variant variant) const {
  const auto v = violations(variant);
  if (v.empty()) return;
  std::string msg = "invalid graph config:";
  for (const auto& m : v) msg += "\n  - " + m;
  throw ConfigError(msg);
}

double GraphConfig::dropout_rate(int activation) const {
  for (const DropoutSlot& d : dropout_schedule) {
    if (d.activation == activation) return d.rate;
  }
  return 0.0;
}

KeyValues graph_config_to_key_values(Variant variant, const GraphConfig& c) {
  KeyValues kv;
  kv["variant"] = variant_name(variant);
  kv["input_height"] = std::to_string(c.input_height);
  kv["input_width"] = std::to_string(c.input_width);
  kv["input_channels"] = std::to_string(c.input_channels);
  kv["channel_sequence"] = join_list(c.channel_sequence);
  kv["dilation_rates"] = join_list(c.dilation_rates);
  std::string drop;
  for (const DropoutSlot& d : c.dropout_schedule) {
    if (!drop.empty()) drop += ',';
    drop += std::to_string(d.activation) + ":" + format_float(d.rate);
  }
  kv["dropout_schedule"] = drop;
  kv["loss"] = loss_name(c.loss);
  kv["bn_momentum"] = format_float(c.bn_momentum);
  kv["bn_epsilon"] = format_float(c.bn_epsilon);
  kv["seed"] = std::to_string(c.seed);
  return kv;
}

std::pair<Variant, GraphConfig> graph_config_from_key_values(const KeyValues& kv) {
  Variant variant = Variant::Proposed;
  GraphConfig c;
  for (const auto& [key, value] : kv) {
    if (key == "variant") {
      variant = parse_variant(value);
    } else if (key == "input_height") {
      c.input_height = parse_uint(key, value);
    } else if (key == "input_width") {
      c.input_width = parse_uint(key, value);
    } else if (key == "input_channels") {
      c.input_channels = parse_uint(key, value);
    } else if (key == "channel_sequence") {
      const auto list = parse_uint_list(key, value);
      c.channel_sequence.assign(list.begin(), list.end());
    } else if (key == "dilation_rates") {
      c.dilation_rates.clear();
      for (auto d : parse_uint_list(key, value)) c.dilation_rates.push_back(static_cast<int>(d));
    } else if (key == "dropout_schedule") {
      c.dropout_schedule.clear();
      std::string_view rest = value;
      while (!rest.empty()) {
        const auto comma = rest.find(',');
        const std::string_view item = rest.substr(0, comma);
        const auto colon = item.find(':');
        if (colon == std::string_view::npos) {
          throw ConfigError("dropout_schedule: expected activation:rate, got '" + std::string(item) + "'");
        }
        c.dropout_schedule.push_back({static_cast<int>(parse_uint(key, item.substr(0, colon))),
                                      parse_double(key, item.substr(colon + 1))});
        if (comma == std::string_view::npos) break;
        rest = rest.substr(comma + 1);
      }
    } else if (key == "loss") {
      c.loss = parse_loss(value);
    } else if (key == "bn_momentum") {
      c.bn_momentum = parse_double(key, value);
    } else if (key == "bn_epsilon") {
      c.bn_epsilon = parse_double(key, value);
    } else if (key == "seed") {
      c.seed = parse_uint(key, value);
    } else {
      throw ConfigError("unknown graph config key '" + key + "'");
    }
  }
  return {variant, c};
}

template <typename T>
ModelGraph<T> ModelGraph<T>::build(Variant variant, GraphConfig config) {
  config.validate(variant);
  ModelGraph g;
  g.variant_ = variant;
  g.config_ = std::move(config);
  g.id_ = next_graph_id.fetch_add(1);
  const GraphConfig& c = g.config_;
  const auto& ch = c.channel_sequence;
  const bool pyramid = uses_pyramid(variant);
  const bool skips = uses_skips(variant);

  auto add = [&](LayerInfo info) {
    info.dropout_rate = c.dropout_rate(info.index);
    g.layers_.push_back(std::move(info));
  };
  const std::size_t first_out = (pyramid ? 3 : 1) * ch[0];
  add({.index = 1,
       .in_channels = c.input_channels,
       .out_channels = first_out,
       .dilations = pyramid ? c.dilation_rates : std::vector<int>{1},
       .batch_norm = true});
  add({.index = 2, .in_channels = first_out, .out_channels = ch[1], .dilations = {1}, .batch_norm = true,
       .pool_output = true});
  add({.index = 3, .in_channels = ch[1], .out_channels = ch[2], .dilations = {1}, .batch_norm = true,
       .pool_output = true});
  add({.index = 4, .in_channels = ch[2], .out_channels = ch[3], .dilations = {1}, .batch_norm = true,
       .pool_output = true});
  add({.index = 5, .in_channels = ch[3] + (skips ? ch[2] : 0), .out_channels = ch[2], .dilations = {1},
       .upsample_input = true, .skip_from = skips ? 3 : 0});
  add({.index = 6, .in_channels = ch[2] + (skips ? ch[1] : 0), .out_channels = ch[1], .dilations = {1},
       .upsample_input = true, .skip_from = skips ? 2 : 0});
  add({.index = 7, .in_channels = ch[1] + (skips ? first_out : 0), .out_channels = ch[0], .dilations = {1},
       .upsample_input = true, .skip_from = skips ? 1 : 0});
  add({.index = 8, .in_channels = ch[0], .out_channels = ch[0], .kernel_size = 1, .dilations = {1}});
  add({.index = 9, .in_channels = ch[0], .out_channels = 1, .kernel_size = 1, .dilations = {1},
       .activation = Activation::Sigmoid});

  for (LayerInfo& info : g.layers_) {
    const std::size_t branches = info.dilations.size();
    const std::size_t unit_out = info.out_channels / branches;
    const std::size_t k = info.kernel_size;
    std::vector<Unit> units;
    for (int d : info.dilations) {
      Unit u{ConvParams<T>(Tensor<T>({unit_out, info.in_channels, k, k}), std::vector<T>(unit_out, T{0}), d),
             std::nullopt};
      info.parameter_count += unit_out * info.in_channels * k * k + unit_out;
      if (info.batch_norm) {
        u.bn.emplace(unit_out, c.bn_momentum, c.bn_epsilon);
        info.parameter_count += 2 * unit_out;
      }
      units.push_back(std::move(u));
    }
    g.units_.push_back(std::move(units));
  }
  return g;
}

template <typename T>
void ModelGraph<T>::init_parameters(std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& layer : units_) {
    for (Unit& u : layer) {
      const double fan_in = static_cast<double>(u.conv.in_channels() * u.conv.kernel_size() * u.conv.kernel_size());
      const double stddev = std::sqrt(2.0 / fan_in);
      for (T& w : u.conv.weight_values()) w = static_cast<T>(stddev * normal(rng));
      std::fill(u.conv.bias_values().begin(), u.conv.bias_values().end(), T{0});
      if (u.bn) {
        std::fill(u.bn->gamma.begin(), u.bn->gamma.end(), T{1});
        std::fill(u.bn->beta.begin(), u.bn->beta.end(), T{0});
        std::fill(u.bn->running_mean.begin(), u.bn->running_mean.end(), T{0});
        std::fill(u.bn->running_var.begin(), u.bn->running_var.end(), T{1});
      }
    }
  }
  ++version_;
}

template <typename T>
std::vector<SkipEdge> ModelGraph<T>::skip_edges() const {
  std::vector<SkipEdge> edges;
  for (const LayerInfo& l : layers_) {
    if (l.skip_from) edges.push_back({l.index, l.skip_from});
  }
  return edges;
}

template <typename T>
std::size_t ModelGraph<T>::param_count() const {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.values.size();
  return total;
}

template <typename T>
std::vector<ParamRef<const T>> ModelGraph<T>::parameters() const {
  std::vector<ParamRef<const T>> out;
  for (std::size_t l = 0; l < units_.size(); ++l) {
    const auto& layer = units_[l];
    for (std::size_t b = 0; b < layer.size(); ++b) {
      const Unit& u = layer[b];
      const std::string p = layer_prefix(layers_[l].index, b, layer.size());
      const std::size_t co = u.conv.out_channels();
      out.push_back({p + ".weight", u.conv.weights().shape(), u.conv.weights().data()});
      out.push_back({p + ".bias", Shape{co, 1, 1, 1}, u.conv.bias()});
      if (u.bn) {
        out.push_back({p + ".bn.gamma", Shape{co, 1, 1, 1}, u.bn->gamma});
        out.push_back({p + ".bn.beta", Shape{co, 1, 1, 1}, u.bn->beta});
      }
    }
  }
  return out;
}

template <typename T>
std::vector<ParamRef<T>> ModelGraph<T>::mutable_parameters() {
  ++version_;
  std::vector<ParamRef<T>> out;
  for (std::size_t l = 0; l < units_.size(); ++l) {
    auto& layer = units_[l];
    for (std::size_t b = 0; b < layer.size(); ++b) {
      Unit& u = layer[b];
      const std::string p = layer_prefix(layers_[l].index, b, layer.size());
      const std::size_t co = u.conv.out_channels();
      out.push_back({p + ".weight", u.conv.weights().shape(), u.conv.weight_values()});
      out.push_back({p + ".bias", Shape{co, 1, 1, 1}, u.conv.bias_values()});
      if (u.bn) {
        out.push_back({p + ".bn.gamma", Shape{co, 1, 1, 1}, u.bn->gamma});
        out.push_back({p + ".bn.beta", Shape{co, 1, 1, 1}, u.bn->beta});
      }
    }
  }
  return out;
}

template <typename T>
std::vector<ParamRef<const T>> ModelGraph<T>::buffers() const {
  std::vector<ParamRef<const T>> out;
  for (std::size_t l = 0; l < units_.size(); ++l) {
    for (std::size_t b = 0; b < units_[l].size(); ++b) {
      const Unit& u = units_[l][b];
      if (!u.bn) continue;
      const std::string p = layer_prefix(layers_[l].index, b, units_[l].size());
      const Shape s{u.bn->channels(), 1, 1, 1};
      out.push_back({p + ".bn.running_mean", s, u.bn->running_mean});
      out.push_back({p + ".bn.running_var", s, u.bn->running_var});
    }
  }
  return out;
}

template <typename T>
std::vector<ParamRef<T>> ModelGraph<T>::mutable_buffers() {
  ++version_;
  std::vector<ParamRef<T>> out;
  for (std::size_t l = 0; l < units_.size(); ++l) {
    for (std::size_t b = 0; b < units_[l].size(); ++b) {
      Unit& u = units_[l][b];
      if (!u.bn) continue;
      const std::string p = layer_prefix(layers_[l].index, b, units_[l].size());
      const Shape s{u.bn->channels(), 1, 1, 1};
      out.push_back({p + ".bn.running_mean", s, u.bn->running_mean});
      out.push_back({p + ".bn.running_var", s, u.bn->running_var});
    }
  }
  return out;
}

template <typename T>
void ModelGraph<T>::check_input(const Tensor<T>& batch) const {
  const Shape s = batch.shape();
  if (s.n == 0) throw ShapeError("forward: empty batch " + s.str());
  if (s.c != config_.input_channels) {
    throw ShapeError("forward: input " + s.str() + " has " + std::to_string(s.c) + " channels, graph expects " +
                     std::to_string(config_.input_channels));
  }
  if (s.h == 0 || s.w == 0 || s.h % 8 != 0 || s.w % 8 != 0) {
    throw ShapeError("forward: input " + s.str() + " spatial dims must be positive multiples of 8");
  }
}

template <typename T>
template <typename Self>
Tensor<T> ModelGraph<T>::run(Self& self, const Tensor<T>& batch, Mode mode, Rng* rng, ForwardCache<T>* cache) {
  constexpr bool can_update = !std::is_const_v<Self>;
  self.check_input(batch);
  const std::size_t count = self.layers_.size();
  std::vector<Tensor<T>> outputs(count + 1);
  outputs[0] = batch;
  if (cache) cache->layers_.assign(count, LayerTrace<T>{});

  for (std::size_t l = 0; l < count; ++l) {
    const LayerInfo& info = self.layers_[l];
    auto& units = self.units_[l];
    LayerTrace<T>* trace = cache ? &cache->layers_[l] : nullptr;

    Tensor<T> x = info.upsample_input ? upsample_nearest2(outputs[l]) : outputs[l];
    if (trace) trace->upsampled_channels = x.c();
    if (info.skip_from) x = concat_channels(x, outputs[static_cast<std::size_t>(info.skip_from)]);

    Tensor<T> act;
    for (std::size_t b = 0; b < units.size(); ++b) {
      auto& u = units[b];
      Tensor<T> z = conv2d(x, u.conv);
      UnitTrace<T> ut;
      if (u.bn) {
        BatchNormResult<T> r;
        if constexpr (can_update) {
          if (mode == Mode::Train && !self.bn_frozen_) {
            r = batchnorm(z, *u.bn, Mode::Train);
          } else {
            r = batchnorm(z, std::as_const(*u.bn));
          }
        } else {
          r = batchnorm(z, *u.bn);
        }
        z = std::move(r.output);
        if (trace) ut.bn = std::move(r.cache);
      }
      Tensor<T> a = info.activation == Activation::Sigmoid ? sigmoid(z) : relu(z);
      if (trace) {
        ut.pre_activation = std::move(z);
        trace->units.push_back(std::move(ut));
      }
      act = b == 0 ? std::move(a) : concat_channels(act, a);
    }
    if (trace && info.activation == Activation::Sigmoid) trace->output_activation = act;

    if (info.dropout_rate > 0.0 && mode == Mode::Train) {
      DropoutResult<T> d = dropout(act, info.dropout_rate, *rng, mode);
      act = std::move(d.output);
      if (trace) trace->dropout_mask = std::move(d.mask);
    }
    if (info.pool_output) {
      PoolResult<T> p = maxpool2(act);
      if (trace) {
        trace->pool_input = act.shape();
        trace->argmax = std::move(p.argmax);
      }
      act = std::move(p.output);
    }
    if (trace) trace->conv_input = std::move(x);
    outputs[l + 1] = std::move(act);
  }
  return std::move(outputs[count]);
}

template <typename T>
ForwardResult<T> ModelGraph<T>::forward(const Tensor<T>& batch, Mode mode, Rng& rng) {
  ForwardResult<T> r;
  if (mode == Mode::Eval) {
    r.prediction = run(std::as_const(*this), batch, mode, nullptr, nullptr);
    return r;
  }
  r.prediction = run(*this, batch, mode, &rng, &r.cache);
  r.cache.valid_ = true;
  r.cache.graph_id_ = id_;
  r.cache.version_ = version_;
  r.cache.prediction_shape_ = r.prediction.shape();
  return r;
}

template <typename T>
Tensor<T> ModelGraph<T>::infer(const Tensor<T>& batch) const {
  return run(*this, batch, Mode::Eval, nullptr, nullptr);
}

template <typename T>
GradientSet<T> ModelGraph<T>::zero_gradients() const {
  GradientSet<T> g;
  for (const auto& p : parameters()) g.emplace_back(p.shape);
  return g;
}

template <typename T>
GradientSet<T> ModelGraph<T>::backward(const ForwardCache<T>& cache, const Tensor<T>& loss_cotangent) const {
  if (!cache.valid_) {
    throw UsageError("backward: missing forward cache (run a Train-mode forward first)");
  }
  if (cache.graph_id_ != id_ || cache.version_ != version_) {
    throw UsageError("backward: stale forward cache (parameters changed since the forward pass)");
  }
  if (loss_cotangent.shape() != cache.prediction_shape_) {
    throw ShapeError("backward: cotangent " + loss_cotangent.shape().str() + " does not match prediction " +
                     cache.prediction_shape_.str());
  }

  GradientSet<T> grads = zero_gradients();
  // Offset of each layer's first parameter tensor in parameters() order.
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& layer : units_) {
    offsets.push_back(offset);
    for (const Unit& u : layer) offset += u.bn ? 4 : 2;
  }

  std::vector<Tensor<T>> skip_grads(layers_.size() + 1);
  Tensor<T> g = loss_cotangent;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const LayerInfo& info = layers_[l];
    const LayerTrace<T>& trace = cache.layers_[l];
    if (!skip_grads[l + 1].empty()) add_into(g, skip_grads[l + 1]);
    if (info.pool_output) g = maxpool2_backward(g, trace.argmax, trace.pool_input);
    if (!trace.dropout_mask.empty()) g = dropout_backward(g, trace.dropout_mask);

    const auto& units = units_[l];
    const std::size_t unit_out = info.out_channels / units.size();
    Tensor<T> g_input;
    std::size_t slot = offsets[l];
    for (std::size_t b = 0; b < units.size(); ++b) {
      const Unit& u = units[b];
      const UnitTrace<T>& ut = trace.units[b];
      Tensor<T> gu = units.size() > 1 ? channel_slice(g, b * unit_out, unit_out) : g;
      gu = info.activation == Activation::Sigmoid ? sigmoid_backward(trace.output_activation, gu)
                                                  : relu_backward(ut.pre_activation, gu);
      std::size_t bn_slot = 0;
      if (u.bn) {
        BatchNormGrads<T> bg = batchnorm_backward(gu, *u.bn, *ut.bn);
        bn_slot = slot + 2;
        std::copy(bg.gamma.begin(), bg.gamma.end(), grads[bn_slot].data().begin());
        std::copy(bg.beta.begin(), bg.beta.end(), grads[bn_slot + 1].data().begin());
        gu = std::move(bg.input);
      }
      ConvGrads<T> cg = conv2d_backward(trace.conv_input, u.conv, gu);
      grads[slot] = std::move(cg.weights);
      std::copy(cg.bias.begin(), cg.bias.end(), grads[slot + 1].data().begin());
      if (b == 0) {
        g_input = std::move(cg.input);
      } else {
        add_into(g_input, cg.input);
      }
      slot += u.bn ? 4 : 2;
    }
    if (l == 0) break;

    if (info.skip_from) {
      auto [g_up, g_skip] = split_channels(g_input, trace.upsampled_channels);
      Tensor<T>& target = skip_grads[static_cast<std::size_t>(info.skip_from)];
      if (target.empty()) {
        target = std::move(g_skip);
      } else {
        add_into(target, g_skip);
      }
      g_input = std::move(g_up);
    }
    g = info.upsample_input ? upsample_nearest2_backward(g_input) : std::move(g_input);
  }
  return grads;
}

template <typename T>
template <typename U>
ModelGraph<U> ModelGraph<T>::cast() const {
  ModelGraph<U> out = ModelGraph<U>::build(variant_, config_);
  auto src = parameters();
  auto dst = out.mutable_parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::copy(src[i].values.begin(), src[i].values.end(), dst[i].values.begin());
  }
  auto sb = buffers();
  auto db = out.mutable_buffers();
  for (std::size_t i = 0; i < sb.size(); ++i) {
    std::copy(sb[i].values.begin(), sb[i].values.end(), db[i].values.begin());
  }
  out.metadata_ = metadata_;
  out.bn_frozen_ = bn_frozen_;
  return out;
}

template class ModelGraph<float>;
template class ModelGraph<double>;
template ModelGraph<double> ModelGraph<float>::cast<double>() const;
template ModelGraph<float> ModelGraph<double>::cast<float>() const;
template ModelGraph<float> ModelGraph<float>::cast<float>() const;
template ModelGraph<double> ModelGraph<double>::cast<double>() const;

}  // namespace lmnet
