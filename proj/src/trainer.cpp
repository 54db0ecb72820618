#include "lmnet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <random>

#include "binary_io.hpp"
#include "lmnet/checkpoint.hpp"

namespace lmnet {

namespace fs = std::filesystem;

namespace {

const char* const kGraphKeys[] = {"variant",          "input_height",     "input_width", "input_channels",
                                  "channel_sequence", "dilation_rates",   "loss",        "dropout_schedule",
                                  "bn_momentum",      "bn_epsilon",       "seed"};

bool is_graph_key(const std::string& key) {
  for (const char* k : kGraphKeys) {
    if (key == k) return true;
  }
  return false;
}

std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_sample_shapes(const TrainConfig& config, std::span<const ImagePair> samples, const char* split) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Shape& s = samples[i].image.shape();
    if (s.c != config.graph.input_channels || s.h != config.graph.input_height || s.w != config.graph.input_width) {
      throw ConfigError(std::string(split) + " sample " + std::to_string(i) + " has shape " + s.str() +
                        " but the graph expects " + std::to_string(config.graph.input_channels) + "x" +
                        std::to_string(config.graph.input_height) + "x" + std::to_string(config.graph.input_width));
    }
  }
}

KeyValues model_metadata(const TrainConfig& config, const TrainState& state) {
  KeyValues kv;
  for (const auto& [k, v] : train_config_to_key_values(config)) {
    if (!is_graph_key(k)) kv["train." + k] = v;
  }
  kv["train.completed_epochs"] = std::to_string(state.epoch);
  kv["train.step"] = std::to_string(state.adam.step);
  return kv;
}

class RunFiles {
 public:
  explicit RunFiles(const TrainConfig& config) : config_(config) {
    if (!config.output_dir.empty()) fs::create_directories(config.output_dir);
  }

  void save_model(TrainState& state, const char* name) const {
    if (config_.output_dir.empty()) return;
    state.graph.set_metadata(model_metadata(config_, state));
    save_checkpoint(state.graph, config_.output_dir / name);
  }

  void save_progress(const TrainState& state) const {
    if (config_.output_dir.empty()) return;
    write_file_bytes(config_.output_dir / "train_state.lmkt", encode_train_state(config_, state));
    write_file_bytes(config_.output_dir / "steps.csv", steps_csv(state.history));
    write_file_bytes(config_.output_dir / "validation.csv", validation_csv(state.history));
  }

 private:
  const TrainConfig& config_;
};

template <typename T>
void write_tensor_payload(detail::ByteWriter& w, const Tensor<T>& t) {
  for (T v : t.data()) w.f32(static_cast<float>(v));
}

}  // namespace

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out = graph.violations(variant);
  if (epochs == 0) out.push_back("epochs must be at least 1");
  if (batch_size == 0) out.push_back("batch_size must be at least 1");
  if (micro_batch == 0) out.push_back("micro_batch must be at least 1");
  for (auto& v : adam.violations()) out.push_back(std::move(v));
  if (!(threshold >= 0.0 && threshold <= 1.0)) out.push_back("threshold must lie in [0,1], got " + format_float(threshold));
  return out;
}

void TrainConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid training configuration:";
  for (const auto& s : v) msg += "\n  " + s;
  throw ConfigError(msg);
}

KeyValues train_config_to_key_values(const TrainConfig& config) {
  KeyValues kv = graph_config_to_key_values(config.variant, config.graph);
  kv["epochs"] = std::to_string(config.epochs);
  kv["batch_size"] = std::to_string(config.batch_size);
  kv["micro_batch"] = std::to_string(config.micro_batch);
  kv["lr"] = format_float(config.adam.lr);
  kv["beta1"] = format_float(config.adam.beta1);
  kv["beta2"] = format_float(config.adam.beta2);
  kv["adam_eps"] = format_float(config.adam.epsilon);
  kv["threshold"] = format_float(config.threshold);
  return kv;
}

TrainConfig train_config_from_key_values(const KeyValues& kv, TrainConfig base) {
  KeyValues graph_kv = graph_config_to_key_values(base.variant, base.graph);
  for (const auto& [key, value] : kv) {
    if (is_graph_key(key)) {
      graph_kv[key] = value;
    } else if (key == "epochs") {
      base.epochs = parse_uint(key, value);
    } else if (key == "batch_size") {
      base.batch_size = parse_uint(key, value);
    } else if (key == "micro_batch") {
      base.micro_batch = parse_uint(key, value);
    } else if (key == "lr") {
      base.adam.lr = parse_double(key, value);
    } else if (key == "beta1") {
      base.adam.beta1 = parse_double(key, value);
    } else if (key == "beta2") {
      base.adam.beta2 = parse_double(key, value);
    } else if (key == "adam_eps") {
      base.adam.epsilon = parse_double(key, value);
    } else if (key == "threshold") {
      base.threshold = parse_double(key, value);
    } else if (key == "max_steps") {
      base.max_steps = parse_uint(key, value);
    } else {
      throw ConfigError("unknown training config key '" + key + "'");
    }
  }
  std::tie(base.variant, base.graph) = graph_config_from_key_values(graph_kv);
  return base;
}

Rng micro_batch_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t micro) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(step), static_cast<std::uint32_t>(step >> 32),
                    static_cast<std::uint32_t>(micro), static_cast<std::uint32_t>(micro >> 32)};
  return Rng(seq);
}

template <typename T>
BatchGradients<T> batch_gradients(ModelGraph<T>& graph, const Tensor<T>& images, const Tensor<T>& masks,
                                  std::size_t micro_batch, std::uint64_t seed, std::uint64_t step) {
  if (images.n() != masks.n() || images.n() == 0) {
    throw ShapeError("batch_gradients: " + images.shape().str() + " images with " + masks.shape().str() + " masks");
  }
  if (micro_batch == 0) throw std::invalid_argument("micro_batch must be at least 1");
  const std::size_t total = images.n();
  const LossKind kind = graph.config().loss;
  BatchGradients<T> out{graph.zero_gradients(), 0.0};
  std::size_t k = 0;
  for (std::size_t start = 0; start < total; start += micro_batch, ++k) {
    const std::size_t m = std::min(micro_batch, total - start);
    const Tensor<T> x = slice_batch(images, start, m);
    const Tensor<T> y = slice_batch(masks, start, m);
    Rng rng = micro_batch_rng(seed, step, k);
    ForwardResult<T> fr = graph.forward(x, Mode::Train, rng);
    out.loss += loss_value(kind, fr.prediction, y) * static_cast<double>(m);
    const GradientSet<T> g = graph.backward(fr.cache, loss_gradient(kind, fr.prediction, y));
    for (std::size_t i = 0; i < g.size(); ++i) {
      auto dst = out.grads[i].data();
      auto src = g[i].data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j] * static_cast<T>(m);
    }
  }
  for (auto& g : out.grads) {
    for (T& v : g.data()) v /= static_cast<T>(total);
  }
  out.loss /= static_cast<double>(total);
  return out;
}

std::uint64_t planned_steps(std::size_t train_count, std::size_t batch_size, std::size_t epochs,
                            std::uint64_t max_steps) {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  const std::uint64_t per_epoch = (train_count + batch_size - 1) / batch_size;
  const std::uint64_t steps = per_epoch * epochs;
  return max_steps ? std::min(steps, max_steps) : steps;
}

MetricsReport evaluate(const ModelGraph<float>& graph, std::span<const ImagePair> samples, const std::string& split,
                       double threshold, std::size_t micro_batch) {
  if (samples.empty()) throw ConfigError("cannot evaluate the empty '" + split + "' split");
  if (micro_batch == 0) throw std::invalid_argument("micro_batch must be at least 1");
  ConfusionCounts counts;
  double loss_sum = 0.0;
  std::vector<std::size_t> members;
  for (std::size_t start = 0; start < samples.size(); start += micro_batch) {
    const std::size_t m = std::min(micro_batch, samples.size() - start);
    members.resize(m);
    for (std::size_t i = 0; i < m; ++i) members[i] = start + i;
    const Batch b = make_batch(samples, members);
    const Tensor<float> pred = graph.infer(b.images);
    loss_sum += loss_value(graph.config().loss, pred, b.masks) * static_cast<double>(m);
    counts += confusion(pred, b.masks, threshold);
  }
  return report(counts, loss_sum / static_cast<double>(samples.size()), split, samples.size());
}

TrainResult train(const TrainConfig& config, std::span<const ImagePair> train_set, std::span<const ImagePair> val_set,
                  const StepObserver& observer) {
  config.validate();
  if (train_set.empty()) throw ConfigError("the train split is empty");
  if (val_set.empty()) throw ConfigError("the val split is empty");

  TrainResult result;
  if (config.dry_run) {
    result.steps = planned_steps(train_set.size(), config.batch_size, config.epochs, config.max_steps);
    return result;
  }
  check_sample_shapes(config, train_set, "train");
  check_sample_shapes(config, val_set, "val");

  TrainState state;
  if (!config.resume_from.empty()) {
    auto [stored, resumed] = decode_train_state(read_file_bytes(config.resume_from));
    KeyValues expected = train_config_to_key_values(config);
    stored.erase("epochs");
    expected.erase("epochs");
    if (stored != expected) {
      std::string msg = "training state '" + config.resume_from.string() + "' was produced by a different config:";
      for (const auto& [k, v] : expected) {
        auto it = stored.find(k);
        if (it == stored.end() || it->second != v) {
          msg += "\n  " + k + ": stored " + (it == stored.end() ? "<missing>" : it->second) + ", requested " + v;
        }
      }
      throw ConfigError(msg);
    }
    state = std::move(resumed);
  } else {
    state.graph = ModelGraph<float>::build(config.variant, config.graph);
    state.graph.init_parameters(config.graph.seed);
    state.adam = adam_init(state.graph, config.adam);
  }

  const RunFiles files(config);
  const std::uint64_t seed = config.graph.seed;
  auto stop_here = [&] {
    result.stopped_early = true;
    files.save_model(state, "model_final.lmkn");
    files.save_progress(state);
  };

  while (state.epoch < config.epochs) {
    const auto batches = epoch_batches(train_set.size(), config.batch_size, seed, state.epoch);
    while (state.batch < batches.size()) {
      const Batch b = make_batch(train_set, batches[state.batch]);
      const std::uint64_t step = state.adam.step + 1;
      BatchGradients<float> bg = batch_gradients(state.graph, b.images, b.masks, config.micro_batch, seed, step);
      try {
        adam_step(state.graph, bg.grads, state.adam);
      } catch (const StepRejected& e) {
        throw TrainingAborted(step, std::string("training aborted at step ") + std::to_string(step) + ": " + e.what());
      }
      ++state.batch;
      const StepRecord rec{step, state.epoch + 1, bg.loss};
      state.history.steps.push_back(rec);
      ++result.steps;
      if (config.log_every && step % config.log_every == 0) {
        std::cerr << "step " << step << " epoch " << rec.epoch << " loss " << format_float(rec.loss) << "\n";
      }
      const bool keep_going = !observer || observer(state, rec);
      if (!keep_going || (config.max_steps && step >= config.max_steps)) {
        stop_here();
        result.state = std::move(state);
        return result;
      }
    }
    MetricsReport val = evaluate(state.graph, val_set, "val", config.threshold, config.micro_batch);
    state.history.epochs.push_back({state.epoch + 1, val});
    ++state.epoch;
    state.batch = 0;
    if (config.log_every) {
      std::cerr << "epoch " << state.epoch << " val loss " << format_float(val.loss) << " iou "
                << format_float(val.iou) << "\n";
    }
    if (val.loss < state.best_val_loss) {
      state.best_val_loss = val.loss;
      files.save_model(state, "model_best.lmkn");
    }
    files.save_progress(state);
  }
  files.save_model(state, "model_final.lmkn");
  files.save_progress(state);
  result.state = std::move(state);
  return result;
}

TrainResult train_from_index(const TrainConfig& config, const fs::path& index_file, const StepObserver& observer) {
  const DatasetIndex index = read_index(index_file);
  if (index.count(Split::Train) == 0) throw ConfigError("index '" + index_file.string() + "' has no train records");
  if (index.count(Split::Val) == 0) throw ConfigError("index '" + index_file.string() + "' has no val records");
  if (config.dry_run) {
    config.validate();
    TrainResult r;
    r.steps = planned_steps(index.count(Split::Train), config.batch_size, config.epochs, config.max_steps);
    return r;
  }
  const auto train_set = load_split(index, Split::Train);
  const auto val_set = load_split(index, Split::Val);
  return train(config, train_set, val_set, observer);
}

std::string encode_train_state(const TrainConfig& config, const TrainState& state) {
  detail::ByteWriter w;
  w.bytes(kTrainingMagic);
  w.uint(kCheckpointVersion);
  w.str(render_key_values(train_config_to_key_values(config)));
  const std::string model = encode_model(state.graph);
  w.uint(static_cast<std::uint64_t>(model.size()));
  w.bytes(model);
  w.uint(state.adam.step);
  w.uint(static_cast<std::uint32_t>(state.adam.m.size()));
  for (const auto& t : state.adam.m) write_tensor_payload(w, t);
  for (const auto& t : state.adam.v) write_tensor_payload(w, t);
  w.uint(state.epoch);
  w.uint(state.batch);
  w.f64(state.best_val_loss);
  w.uint(static_cast<std::uint64_t>(state.history.steps.size()));
  for (const StepRecord& s : state.history.steps) {
    w.uint(s.step);
    w.uint(s.epoch);
    w.f64(s.loss);
  }
  w.uint(static_cast<std::uint64_t>(state.history.epochs.size()));
  for (const EpochRecord& e : state.history.epochs) {
    const MetricsReport& m = e.validation;
    w.uint(e.epoch);
    w.uint(static_cast<std::uint64_t>(m.samples));
    for (double v : {m.loss, m.accuracy, m.iou, m.precision, m.recall}) w.f64(v);
    w.uint(static_cast<std::uint8_t>(m.accuracy_degenerate | (m.iou_degenerate << 1) |
                                     (m.precision_degenerate << 2) | (m.recall_degenerate << 3)));
  }
  return w.take();
}

std::pair<KeyValues, TrainState> decode_train_state(std::string_view bytes) {
  using Kind = CheckpointError::Kind;
  detail::ByteReader r(bytes);
  if (bytes.size() < kTrainingMagic.size() || r.bytes(kTrainingMagic.size()) != kTrainingMagic) {
    throw CheckpointError(Kind::BadMagic, "not a training-state file (expected magic LMKT)");
  }
  const auto version = r.uint<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::UnsupportedVersion,
                          "unsupported training-state version " + std::to_string(version));
  }
  r.section("config text");
  KeyValues kv;
  TrainConfig config;
  try {
    kv = parse_key_values(r.str());
    config = train_config_from_key_values(kv);
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::Malformed, std::string("training-state config: ") + e.what());
  }
  r.section("embedded model");
  const auto model_size = r.uint<std::uint64_t>();
  if (model_size > r.remaining()) throw CheckpointError(Kind::Truncated, "truncated embedded model");
  TrainState state;
  state.graph = decode_model<float>(r.bytes(static_cast<std::size_t>(model_size)));

  r.section("optimizer state");
  state.adam = adam_init(state.graph, config.adam);
  state.adam.step = r.uint<std::uint64_t>();
  if (r.uint<std::uint32_t>() != state.adam.m.size()) {
    throw CheckpointError(Kind::Malformed, "optimizer state does not match the model's parameter count");
  }
  for (auto* moments : {&state.adam.m, &state.adam.v}) {
    for (auto& t : *moments) {
      for (float& v : t.data()) v = r.f32();
    }
  }
  r.section("progress");
  state.epoch = r.uint<std::uint64_t>();
  state.batch = r.uint<std::uint64_t>();
  state.best_val_loss = r.f64();
  r.section("history");
  const auto nsteps = r.uint<std::uint64_t>();
  if (nsteps > r.remaining() / 24) throw CheckpointError(Kind::Truncated, "truncated history");
  for (std::uint64_t i = 0; i < nsteps; ++i) {
    StepRecord s;
    s.step = r.uint<std::uint64_t>();
    s.epoch = r.uint<std::uint64_t>();
    s.loss = r.f64();
    state.history.steps.push_back(s);
  }
  const auto nepochs = r.uint<std::uint64_t>();
  if (nepochs > r.remaining() / 57) throw CheckpointError(Kind::Truncated, "truncated history");
  for (std::uint64_t i = 0; i < nepochs; ++i) {
    EpochRecord e;
    e.epoch = r.uint<std::uint64_t>();
    MetricsReport& m = e.validation;
    m.split = "val";
    m.samples = static_cast<std::size_t>(r.uint<std::uint64_t>());
    m.loss = r.f64();
    m.accuracy = r.f64();
    m.iou = r.f64();
    m.precision = r.f64();
    m.recall = r.f64();
    const auto flags = r.uint<std::uint8_t>();
    m.accuracy_degenerate = flags & 1;
    m.iou_degenerate = flags & 2;
    m.precision_degenerate = flags & 4;
    m.recall_degenerate = flags & 8;
    state.history.epochs.push_back(std::move(e));
  }
  if (!r.at_end()) {
    throw CheckpointError(Kind::Malformed, std::to_string(r.remaining()) + " unexpected trailing bytes");
  }
  return {std::move(kv), std::move(state)};
}

std::string steps_csv(const TrainHistory& history) {
  std::string out = "step,epoch,loss\n";
  for (const StepRecord& s : history.steps) {
    out += std::to_string(s.step) + "," + std::to_string(s.epoch) + "," + g17(s.loss) + "\n";
  }
  return out;
}

std::string validation_csv(const TrainHistory& history) {
  std::string out = "epoch,loss,accuracy,iou,precision,recall\n";
  for (const EpochRecord& e : history.epochs) {
    const MetricsReport& m = e.validation;
    out += std::to_string(e.epoch) + "," + g17(m.loss) + "," + g17(m.accuracy) + "," + g17(m.iou) + "," +
           g17(m.precision) + "," + g17(m.recall) + "\n";
  }
  return out;
}

template BatchGradients<float> batch_gradients(ModelGraph<float>&, const Tensor<float>&, const Tensor<float>&,
                                               std::size_t, std::uint64_t, std::uint64_t);
template BatchGradients<double> batch_gradients(ModelGraph<double>&, const Tensor<double>&, const Tensor<double>&,
                                                std::size_t, std::uint64_t, std::uint64_t);

}  // namespace lmnet
