#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "lmnet/checkpoint.hpp"
#include "lmnet/config_text.hpp"
#include "lmnet/dataset.hpp"
#include "lmnet/gradcheck.hpp"
#include "lmnet/image_io.hpp"
#include "lmnet/metrics.hpp"
#include "lmnet/model.hpp"
#include "lmnet/runtime.hpp"
#include "lmnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace lmnet;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct TrainKey {
  const char* key;
  const char* help;
};

// Canonical training keys; each is exposed as --<key with dashes>.
constexpr TrainKey kTrainKeys[] = {
    {"variant", "plain, dilation, residual or proposed"},
    {"epochs", "passes over the train split (default 10)"},
    {"batch_size", "samples per optimizer step (default 200)"},
    {"micro_batch", "samples per forward/backward chunk (default 10)"},
    {"lr", "Adam learning rate (default 0.005)"},
    {"beta1", "Adam beta1 (default 0.9)"},
    {"beta2", "Adam beta2 (default 0.999)"},
    {"adam_eps", "Adam epsilon (default 1e-8)"},
    {"threshold", "probability threshold for validation metrics (default 0.5)"},
    {"seed", "seed for initialization, shuffling and dropout (default 0)"},
    {"max_steps", "stop after this many optimizer steps (default 0 = no cap)"},
    {"input_height", "input height in pixels (default: taken from the data)"},
    {"input_width", "input width in pixels (default: taken from the data)"},
    {"input_channels", "input channels (default 3)"},
    {"channel_sequence", "encoder widths C1,C2,C3,C4 (default 5,13,89,233)"},
    {"dilation_rates", "first-layer pyramid dilations (default 2,3,5)"},
    {"dropout_schedule", "activation:rate list (default 4:0.1,5:0.5,6:0.3)"},
    {"loss", "bce or mse (default bce)"},
    {"bn_momentum", "batch-norm running-statistics momentum (default 0.1)"},
    {"bn_epsilon", "batch-norm epsilon (default 1e-5)"},
};

std::string dashed(std::string key) {
  for (char& ch : key) {
    if (ch == '_') ch = '-';
  }
  return key;
}

/// Splices `--key=value` arguments from the file named by --config in front
/// of the command-line flags, so explicit flags (parsed later) take precedence.
std::vector<std::string> expand_config_file(std::vector<std::string> args) {
  std::string file;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      file = args[i + 1];
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      break;
    }
    if (args[i].starts_with("--config=")) {
      file = args[i].substr(9);
      args.erase(args.begin() + static_cast<long>(i));
      break;
    }
  }
  if (file.empty()) return args;
  const std::string text = read_file_bytes(file);
  KeyValues kv;
  try {
    kv = parse_key_values(text);
  } catch (const ConfigError& e) {
    throw ConfigError(file + ": " + e.what());
  }
  std::vector<std::string> injected;
  for (const auto& [k, value] : kv) {
    const std::string key = k.starts_with("train.") ? k.substr(6) : k;
    injected.push_back("--" + dashed(key) + "=" + value);
  }
  const auto at = args.begin() + (args.size() > 1 ? 2 : 1);
  args.insert(at, injected.begin(), injected.end());
  return args;
}

void echo_config(const KeyValues& kv) {
  std::cout << "resolved config:\n";
  for (const auto& [k, v] : kv) std::cout << "  " << k << "=" << v << "\n";
  std::cout.flush();
}

std::string yes_no(bool b) { return b ? "true" : "false"; }

struct PrepareArgs {
  PrepareConfig config;
};

int run_prepare(const PrepareArgs& a) {
  const PrepareConfig& c = a.config;
  echo_config({{"input_dir", c.input_dir.string()},
               {"output_dir", c.output_dir.string()},
               {"tile_size", std::to_string(c.tile_size)},
               {"target_size", std::to_string(c.target_size)},
               {"min_fg", format_float(c.min_fg)},
               {"max_fg", format_float(c.max_fg)},
               {"overwrite", yes_no(c.overwrite)}});
  const PrepareSummary s = prepare_dataset(c);
  std::cout << "split  sources  kept  rejected\n";
  for (Split sp : kAllSplits) {
    const auto i = static_cast<std::size_t>(sp);
    char line[96];
    std::snprintf(line, sizeof line, "%-5s  %7zu  %4zu  %8zu\n", std::string(split_name(sp)).c_str(), s.sources[i],
                  s.kept[i], s.rejected[i]);
    std::cout << line;
  }
  std::cout << "index: " << (c.output_dir / "index.tsv").string() << "\n";
  return 0;
}

struct TrainArgs {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::string input_size;
  CLI::Option* input_size_opt = nullptr;
  fs::path index;
  fs::path out;
  fs::path resume;
  bool dry_run = false;
  std::size_t log_every = 1;
};

/// Height and width of the first train image listed in the index.
std::pair<std::size_t, std::size_t> data_input_size(const fs::path& index_file) {
  const DatasetIndex index = read_index(index_file);
  const auto train = index.of(Split::Train);
  if (train.empty()) throw ConfigError("index '" + index_file.string() + "' has no train records");
  const Image8 img = read_image(train.front().image);
  return {img.height, img.width};
}

int run_train(const TrainArgs& a) {
  KeyValues kv;
  for (const auto& [key, opt] : a.options) {
    if (opt->count()) kv[key] = a.values.at(key);
  }
  if (a.input_size_opt->count()) {
    kv.try_emplace("input_height", a.input_size);
    kv.try_emplace("input_width", a.input_size);
  }
  TrainConfig c = train_config_from_key_values(kv);
  c.dry_run = a.dry_run;
  c.output_dir = a.out;
  c.resume_from = a.resume;
  c.log_every = a.log_every;
  c.validate();
  if (!c.dry_run && c.output_dir.empty()) throw ConfigError("--out is required unless --dry-run is given");
  if (!kv.count("input_height") || !kv.count("input_width")) {
    const auto [h, w] = data_input_size(a.index);
    if (!kv.count("input_height")) c.graph.input_height = h;
    if (!kv.count("input_width")) c.graph.input_width = w;
    c.validate();
  }

  KeyValues echo = train_config_to_key_values(c);
  echo["max_steps"] = std::to_string(c.max_steps);
  echo["index"] = a.index.string();
  echo["out"] = a.out.string();
  echo["resume"] = a.resume.string();
  echo["dry_run"] = yes_no(c.dry_run);
  echo["log_every"] = std::to_string(c.log_every);
  echo_config(echo);

  const TrainResult r = train_from_index(c, a.index);
  if (c.dry_run) {
    std::cout << "planned optimizer steps: " << r.steps << "\n";
    return 0;
  }
  const TrainHistory& h = r.state->history;
  std::cout << "optimizer steps: " << r.steps << (r.stopped_early ? " (stopped at max_steps)" : "") << "\n";
  if (!h.steps.empty()) std::cout << "last training loss: " << format_float(h.steps.back().loss) << "\n";
  if (!h.epochs.empty()) {
    const MetricsReport& v = h.epochs.back().validation;
    std::cout << "last validation: loss " << format_float(v.loss) << " iou " << format_float(v.iou) << "\n";
  }
  std::cout << "outputs: " << c.output_dir.string() << "\n";
  return 0;
}

struct EvalArgs {
  fs::path checkpoint;
  fs::path index;
  std::string split = "test";
  double threshold = 0.5;
  std::size_t micro_batch = 10;
};

int run_eval(const EvalArgs& a) {
  const Split split = parse_split(a.split);
  if (!(a.threshold >= 0.0 && a.threshold <= 1.0)) throw ConfigError("--threshold must lie in [0,1]");
  if (a.micro_batch == 0) throw ConfigError("--micro-batch must be at least 1");
  echo_config({{"ckpt", a.checkpoint.string()},
               {"index", a.index.string()},
               {"split", a.split},
               {"threshold", format_float(a.threshold)},
               {"micro_batch", std::to_string(a.micro_batch)}});
  const ModelGraph<float> graph = load_checkpoint<float>(a.checkpoint);
  const DatasetIndex index = read_index(a.index);
  if (index.count(split) == 0) throw ConfigError("index '" + a.index.string() + "' has no " + a.split + " records");
  const std::vector<ImagePair> samples = load_split(index, split);
  const Shape s = samples.front().image.shape();
  const GraphConfig& gc = graph.config();
  if (s.h != gc.input_height || s.w != gc.input_width || s.c != gc.input_channels) {
    throw ConfigError("checkpoint '" + a.checkpoint.string() + "' expects " + std::to_string(gc.input_channels) +
                      "x" + std::to_string(gc.input_height) + "x" + std::to_string(gc.input_width) +
                      " inputs but the " + a.split + " split holds " + std::to_string(s.c) + "x" +
                      std::to_string(s.h) + "x" + std::to_string(s.w) + " images");
  }
  const MetricsReport r = evaluate(graph, samples, a.split, a.threshold, a.micro_batch);
  const std::vector<TableRow> rows = {{std::string(variant_title(graph.variant())), r}};
  std::cout << render_table(rows) << render_key_values(r);
  return 0;
}

struct PredictArgs {
  fs::path checkpoint;
  fs::path image;
  fs::path out;
  fs::path prob_out;
  double threshold = 0.5;
};

Tensor<float> center_crop(const Tensor<float>& t, std::size_t h, std::size_t w) {
  const std::size_t y0 = (t.h() - h) / 2;
  const std::size_t x0 = (t.w() - w) / 2;
  Tensor<float> out({t.n(), t.c(), h, w});
  for (std::size_t ch = 0; ch < t.c(); ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out.at(0, ch, y, x) = t.at(0, ch, y0 + y, x0 + x);
    }
  }
  return out;
}

int run_predict(PredictArgs a) {
  if (!(a.threshold >= 0.0 && a.threshold <= 1.0)) throw ConfigError("--threshold must lie in [0,1]");
  if (a.prob_out.empty()) a.prob_out = a.out.parent_path() / (a.out.stem().string() + "_prob.png");
  echo_config({{"ckpt", a.checkpoint.string()},
               {"image", a.image.string()},
               {"out", a.out.string()},
               {"prob_out", a.prob_out.string()},
               {"threshold", format_float(a.threshold)}});
  const ModelGraph<float> graph = load_checkpoint<float>(a.checkpoint);
  Tensor<float> input = image_to_tensor(read_image(a.image));
  const std::size_t h = input.h() / 8 * 8;
  const std::size_t w = input.w() / 8 * 8;
  if (h == 0 || w == 0) {
    throw ImageError("image '" + a.image.string() + "' is smaller than 8 pixels in some dimension");
  }
  if (h != input.h() || w != input.w()) {
    std::cout << "notice: cropped " << input.w() << "x" << input.h() << " to " << w << "x" << h
              << " (centre crop to a multiple of 8)\n";
    input = center_crop(input, h, w);
  }
  const Tensor<float> prob = graph.infer(input);
  Tensor<float> mask(prob.shape());
  for (std::size_t i = 0; i < prob.size(); ++i) mask[i] = static_cast<double>(prob[i]) >= a.threshold ? 1.0f : 0.0f;
  write_image(a.out, tensor_to_image(mask));
  write_image(a.prob_out, tensor_to_image(prob));
  std::cout << "wrote " << a.out.string() << " and " << a.prob_out.string() << " (" << w << "x" << h << ")\n";
  return 0;
}

int run_params(const std::string& variant_text) {
  const Variant v = parse_variant(variant_text);
  echo_config({{"variant", std::string(variant_name(v))}});
  const auto graph = ModelGraph<float>::build(v, GraphConfig{});
  std::cout << "layer  in   out  kernel  dilations  bn   dropout  skip_from  params\n";
  for (const LayerInfo& l : graph.layers()) {
    std::string dil;
    for (std::size_t i = 0; i < l.dilations.size(); ++i) dil += (i ? "," : "") + std::to_string(l.dilations[i]);
    char line[160];
    std::snprintf(line, sizeof line, "%5d  %3zu  %3zu  %3zux%-2zu  %-9s  %-3s  %7.1f  %9s  %6zu\n", l.index,
                  l.in_channels, l.out_channels, l.kernel_size, l.kernel_size, dil.c_str(), l.batch_norm ? "yes" : "no",
                  l.dropout_rate, l.skip_from ? std::to_string(l.skip_from).c_str() : "-", l.parameter_count);
    std::cout << line;
  }
  std::cout << "total parameters: " << graph.param_count() << "\n";
  return 0;
}

struct GradcheckArgs {
  std::string variant = "proposed";
  GradCheckOptions options;
};

int run_gradcheck(const GradcheckArgs& a) {
  const Variant v = parse_variant(a.variant);
  if (!(a.options.step > 0.0)) throw ConfigError("--eps must be positive");
  const GraphConfig config = gradcheck_graph_config();
  KeyValues echo = graph_config_to_key_values(v, config);
  echo["eps"] = format_float(a.options.step);
  echo["tolerance"] = format_float(a.options.tolerance);
  echo["batch"] = std::to_string(a.options.batch);
  echo["check_seed"] = std::to_string(a.options.seed);
  echo_config(echo);
  const auto rows = gradcheck_model(v, config, a.options);
  std::cout << "tensor                       size  max_abs_error  max_abs_grad  rel_error  result\n";
  bool ok = true;
  for (const GradCheckRow& r : rows) {
    char line[200];
    std::snprintf(line, sizeof line, "%-26s  %6zu  %13.3e  %12.3e  %9.2e  %s\n", r.name.c_str(), r.size,
                  r.max_abs_error, r.max_abs_gradient, r.relative_error, r.pass ? "PASS" : "FAIL");
    std::cout << line;
    ok = ok && r.pass;
  }
  std::cout << (ok ? "all tensors pass\n" : "gradient check FAILED\n");
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_limit();
  CLI::App app{"Lightweight landmark segmentation network: data preparation, training and inference"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  const std::string config_help = "key=value file; command-line flags override it";

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "tile, filter and resize a raw dataset into the training layout");
  prepare->add_option("--config", config_help);
  prepare->add_option("--input-dir", prep.config.input_dir, "raw dataset with <split>/{images,masks}")->required();
  prepare->add_option("--output-dir", prep.config.output_dir, "destination of the prepared layout")->required();
  prepare->add_option("--tile-size", prep.config.tile_size, "tile edge in source pixels")->capture_default_str();
  prepare->add_option("--target-size", prep.config.target_size, "output edge in pixels")->capture_default_str();
  prepare->add_option("--min-fg", prep.config.min_fg, "minimum mask foreground fraction")->capture_default_str();
  prepare->add_option("--max-fg", prep.config.max_fg, "maximum mask foreground fraction")->capture_default_str();
  prepare->add_flag("--overwrite", prep.config.overwrite, "replace an existing prepared layout");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "train a variant on a prepared index");
  train_cmd->add_option("--config", config_help);
  for (const TrainKey& k : kTrainKeys) {
    std::string names = "--" + dashed(k.key);
    if (std::string(k.key) == "batch_size") names += ",--batch";
    tr.values[k.key];
    tr.options[k.key] = train_cmd->add_option(names, tr.values[k.key], k.help);
  }
  tr.input_size_opt = train_cmd->add_option("--input-size", tr.input_size, "square input edge (sets height and width)");
  train_cmd->add_option("--index", tr.index, "index.tsv with train and val records")->required();
  train_cmd->add_option("--out", tr.out, "directory for checkpoints and CSV logs");
  train_cmd->add_option("--resume", tr.resume, "train_state.lmkt to continue from");
  train_cmd->add_flag("--dry-run", tr.dry_run, "only count optimizer steps");
  train_cmd->add_option("--log-every", tr.log_every, "progress line every k steps on stderr (0 = silent)")
      ->capture_default_str();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on one split");
  eval->add_option("--config", config_help);
  eval->add_option("--ckpt", ev.checkpoint, "model checkpoint (.lmkn)")->required();
  eval->add_option("--index", ev.index, "index.tsv")->required();
  eval->add_option("--split", ev.split, "train, val or test")->capture_default_str();
  eval->add_option("--threshold", ev.threshold, "probability threshold")->capture_default_str();
  eval->add_option("--micro-batch", ev.micro_batch, "images per forward pass")->capture_default_str();

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "segment one image");
  predict->add_option("--config", config_help);
  predict->add_option("--ckpt", pr.checkpoint, "model checkpoint (.lmkn)")->required();
  predict->add_option("--image", pr.image, "input image (.png, .ppm, .pgm)")->required();
  predict->add_option("--out", pr.out, "binary mask output (.png, .pgm)")->required();
  predict->add_option("--prob-out", pr.prob_out, "probability map output (default <out>_prob.png)");
  predict->add_option("--threshold", pr.threshold, "probability threshold")->capture_default_str();

  std::string params_variant = "proposed";
  auto* params = app.add_subcommand("params", "per-layer parameter census");
  params->add_option("--config", config_help);
  params->add_option("--variant", params_variant, "plain, dilation, residual or proposed")->capture_default_str();

  GradcheckArgs gc;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every parameter gradient (64-bit)");
  grad->add_option("--config", config_help);
  grad->add_option("--variant", gc.variant, "plain, dilation, residual or proposed")->capture_default_str();
  grad->add_option("--eps", gc.options.step, "central-difference step")->capture_default_str();
  grad->add_option("--tolerance", gc.options.tolerance, "maximum relative error")->capture_default_str();
  grad->add_option("--seed", gc.options.seed, "parameter and data seed")->capture_default_str();

  try {
    std::vector<std::string> args(argv, argv + argc);
    args = expand_config_file(std::move(args));
    std::vector<char*> raw;
    for (auto& s : args) raw.push_back(s.data());
    try {
      app.parse(static_cast<int>(raw.size()), raw.data());
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : kExitValidation;
    }
    if (prepare->parsed()) return run_prepare(prep);
    if (train_cmd->parsed()) return run_train(tr);
    if (eval->parsed()) return run_eval(ev);
    if (predict->parsed()) return run_predict(pr);
    if (params->parsed()) return run_params(params_variant);
    if (grad->parsed()) return run_gradcheck(gc);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const TrainingAborted& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
