#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "lmnet/checkpoint.hpp"
#include "lmnet/gradcheck.hpp"
#include "lmnet/trainer.hpp"
#include "oracles.hpp"

using namespace lmnet;
namespace fs = std::filesystem;

namespace {

std::vector<ImagePair> synth_pairs(std::size_t n, std::size_t size, std::uint64_t seed) {
  std::vector<ImagePair> out;
  for (auto& s : synth_generate(n, size, seed)) out.push_back(std::move(s.pair));
  return out;
}

TrainConfig small_config() {
  TrainConfig c;
  c.graph.input_height = c.graph.input_width = 16;
  c.graph.channel_sequence = {3, 4, 5, 6};
  c.graph.seed = 11;
  c.epochs = 2;
  c.batch_size = 4;
  c.micro_batch = 2;
  return c;
}

std::vector<double> losses(const TrainResult& r) {
  std::vector<double> out;
  for (const auto& s : r.state->history.steps) out.push_back(s.loss);
  return out;
}

std::string slurp(const fs::path& p) { return read_file_bytes(p); }

std::vector<float> weights(const ModelGraph<float>& g) {
  std::vector<float> out;
  for (const auto& p : g.parameters()) out.insert(out.end(), p.values.begin(), p.values.end());
  for (const auto& b : g.buffers()) out.insert(out.end(), b.values.begin(), b.values.end());
  return out;
}

}  // namespace

TEST(TrainConfigTest, Validation) {
  EXPECT_TRUE(TrainConfig{}.violations().empty());
  TrainConfig c;
  c.epochs = 0;
  c.batch_size = 0;
  c.micro_batch = 0;
  c.adam.lr = -1;
  c.threshold = 1.5;
  EXPECT_GE(c.violations().size(), 5u);
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainConfigTest, KeyValueRoundTrip) {
  TrainConfig c = small_config();
  c.variant = Variant::Dilation;
  c.adam.lr = 0.001;
  c.threshold = 0.4;
  const KeyValues kv = train_config_to_key_values(c);
  EXPECT_EQ(kv.at("lr"), "0.001");
  EXPECT_EQ(kv.at("variant"), "dilation");
  const TrainConfig back = train_config_from_key_values(kv);
  EXPECT_EQ(train_config_to_key_values(back), kv);
  EXPECT_THROW(train_config_from_key_values({{"learning_rate", "1"}}), ConfigError);
  EXPECT_EQ(train_config_from_key_values({{"max_steps", "7"}}).max_steps, 7u);
}

TEST(Trainer, StepCountLaw) {
  EXPECT_EQ(planned_steps(600, 200, 10), 30u);
  EXPECT_EQ(planned_steps(601, 200, 1), 4u);
  EXPECT_EQ(planned_steps(63, 200, 3), 3u);
  EXPECT_EQ(planned_steps(600, 200, 10, 7), 7u);

  TrainConfig c;
  c.dry_run = true;
  std::vector<ImagePair> train_set(600);
  std::vector<ImagePair> val_set(63);
  EXPECT_EQ(train(c, train_set, val_set).steps, 30u);
  EXPECT_FALSE(train(c, train_set, val_set).state.has_value());
}

TEST(Trainer, RunIsDeterministicAndFollowsTheLaw) {
  const auto train_set = synth_pairs(6, 16, 1);
  const auto val_set = synth_pairs(2, 16, 2);
  const TrainConfig c = small_config();
  const TrainResult a = train(c, train_set, val_set);
  const TrainResult b = train(c, train_set, val_set);
  EXPECT_EQ(a.steps, 4u);
  EXPECT_EQ(losses(a), losses(b));
  const auto& h = a.state->history;
  ASSERT_EQ(h.epochs.size(), 2u);
  for (std::size_t i = 0; i < h.steps.size(); ++i) {
    EXPECT_EQ(h.steps[i].step, i + 1);
    EXPECT_EQ(h.steps[i].epoch, i / 2 + 1);
    EXPECT_TRUE(std::isfinite(h.steps[i].loss));
  }
  EXPECT_EQ(h.epochs[1].validation.samples, 2u);
  EXPECT_EQ(encode_model(a.state->graph), encode_model(b.state->graph));

  TrainConfig other = c;
  other.graph.seed = 12;
  EXPECT_NE(losses(train(other, train_set, val_set)), losses(a));
}

TEST(Trainer, WritesCheckpointsAndLogs) {
  oracle::TempDir dir("train_out");
  const auto train_set = synth_pairs(6, 16, 1);
  const auto val_set = synth_pairs(2, 16, 2);
  TrainConfig c = small_config();
  c.output_dir = dir.path();
  const TrainResult r = train(c, train_set, val_set);
  for (const char* f : {"model_final.lmkn", "model_best.lmkn", "train_state.lmkt", "steps.csv", "validation.csv"}) {
    EXPECT_TRUE(fs::exists(dir.path() / f)) << f;
  }
  const std::string steps = slurp(dir.path() / "steps.csv");
  EXPECT_EQ(steps.rfind("step,epoch,loss\n1,1,", 0), 0u);
  EXPECT_EQ(std::count(steps.begin(), steps.end(), '\n'), 5);
  const std::string val = slurp(dir.path() / "validation.csv");
  EXPECT_EQ(val.rfind("epoch,loss,accuracy,iou,precision,recall\n1,", 0), 0u);

  const auto final_model = load_checkpoint<float>(dir.path() / "model_final.lmkn");
  EXPECT_EQ(final_model.metadata().at("train.completed_epochs"), "2");
  EXPECT_EQ(final_model.metadata().at("train.step"), "4");
  EXPECT_EQ(final_model.metadata().at("train.lr"), "0.005");
  EXPECT_EQ(final_model.infer(train_set[0].image), r.state->graph.infer(train_set[0].image));
}

TEST(Trainer, ResumeIsBitExact) {
  oracle::TempDir dir("train_resume");
  const auto train_set = synth_pairs(6, 16, 1);
  const auto val_set = synth_pairs(2, 16, 2);
  TrainConfig c = small_config();
  c.epochs = 3;
  const TrainResult full = train(c, train_set, val_set);

  for (std::uint64_t k : {1u, 2u, 3u}) {
    TrainConfig first = c;
    first.output_dir = dir.path() / std::to_string(k);
    first.max_steps = k;
    const TrainResult part = train(first, train_set, val_set);
    EXPECT_TRUE(part.stopped_early);
    EXPECT_EQ(part.steps, k);

    TrainConfig second = c;
    second.resume_from = first.output_dir / "train_state.lmkt";
    const TrainResult rest = train(second, train_set, val_set);
    EXPECT_EQ(rest.steps, full.steps - k);
    EXPECT_EQ(losses(rest), losses(full)) << "resumed after step " << k;
    EXPECT_EQ(weights(rest.state->graph), weights(full.state->graph));
  }

  TrainConfig mismatched = c;
  mismatched.adam.lr = 0.01;
  mismatched.resume_from = dir.path() / "1" / "train_state.lmkt";
  try {
    train(mismatched, train_set, val_set);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("lr: stored 0.005, requested 0.01"), std::string::npos);
  }
}

TEST(Trainer, TrainStateRoundTrip) {
  const auto train_set = synth_pairs(6, 16, 1);
  const auto val_set = synth_pairs(2, 16, 2);
  TrainConfig c = small_config();
  c.max_steps = 3;
  const TrainResult r = train(c, train_set, val_set);
  const std::string bytes = encode_train_state(c, *r.state);
  const auto [kv, state] = decode_train_state(bytes);
  EXPECT_EQ(kv, train_config_to_key_values(c));
  EXPECT_EQ(encode_train_state(c, state), bytes);
  EXPECT_EQ(state.epoch, 1u);
  EXPECT_EQ(state.batch, 1u);
  EXPECT_EQ(state.adam.step, 3u);

  EXPECT_THROW(decode_train_state(bytes.substr(0, bytes.size() - 3)), CheckpointError);
  EXPECT_THROW(decode_train_state(bytes + "z"), CheckpointError);
  EXPECT_THROW(decode_train_state(encode_model(state.graph)), CheckpointError);
}

TEST(Trainer, AccumulationMatchesSingleBatch) {
  GraphConfig gc;
  gc.input_height = gc.input_width = 8;
  gc.channel_sequence = {2, 3, 4, 5};
  gc.dropout_schedule = {};
  auto graph = ModelGraph<double>::build(Variant::Proposed, gc);
  graph.init_parameters(3);
  graph.set_batchnorm_frozen(true);

  std::mt19937_64 rng(4);
  const auto images = oracle::random_tensor<double>({8, 3, 8, 8}, rng, 0, 1);
  const auto masks = oracle::random_binary<double>({8, 1, 8, 8}, rng);

  auto update_with = [&](std::size_t micro) {
    ModelGraph<double> g = graph;
    auto bg = batch_gradients(g, images, masks, micro, 1, 1);
    auto state = adam_init(g);
    adam_step(g, bg.grads, state);
    std::vector<double> delta;
    const auto before = graph.parameters();
    const auto after = g.parameters();
    for (std::size_t i = 0; i < after.size(); ++i) {
      for (std::size_t j = 0; j < after[i].values.size(); ++j) delta.push_back(after[i].values[j] - before[i].values[j]);
    }
    return std::pair{bg, delta};
  };
  const auto [acc, acc_delta] = update_with(2);
  const auto [whole, whole_delta] = update_with(8);
  const auto [ragged, ragged_delta] = update_with(3);
  EXPECT_NEAR(acc.loss, whole.loss, 1e-12);
  EXPECT_NEAR(ragged.loss, whole.loss, 1e-12);
  for (std::size_t i = 0; i < whole.grads.size(); ++i) {
    std::vector<double> a(acc.grads[i].data().begin(), acc.grads[i].data().end());
    std::vector<double> r(ragged.grads[i].data().begin(), ragged.grads[i].data().end());
    std::vector<double> w(whole.grads[i].data().begin(), whole.grads[i].data().end());
    EXPECT_LT(gradient_relative_error(a, w, 1e-12), 1e-6) << i;
    EXPECT_LT(gradient_relative_error(r, w, 1e-12), 1e-6) << i;
  }
  EXPECT_LT(gradient_relative_error(acc_delta, whole_delta, 1e-12), 1e-6);
}

TEST(Trainer, EvaluateIsDeterministic) {
  const auto samples = synth_pairs(5, 16, 3);
  auto g = ModelGraph<float>::build(Variant::Proposed, small_config().graph);
  g.init_parameters(1);
  const MetricsReport a = evaluate(g, samples, "test", 0.5, 2);
  const MetricsReport b = evaluate(g, samples, "test", 0.5, 5);
  EXPECT_EQ(a.split, "test");
  EXPECT_EQ(a.samples, 5u);
  EXPECT_EQ(render_key_values(a), render_key_values(evaluate(g, samples, "test", 0.5, 2)));
  EXPECT_NEAR(a.loss, b.loss, 1e-6);
  EXPECT_EQ(a.iou, b.iou);
  EXPECT_THROW(evaluate(g, {}, "test"), ConfigError);
}

TEST(Trainer, EmptyOrMismatchedSplits) {
  const auto samples = synth_pairs(2, 16, 3);
  const TrainConfig c = small_config();
  EXPECT_THROW(train(c, {}, samples), ConfigError);
  EXPECT_THROW(train(c, samples, {}), ConfigError);
  const auto wrong = synth_pairs(2, 24, 3);
  EXPECT_THROW(train(c, wrong, samples), ConfigError);
}

TEST(Trainer, NonFiniteGradientAbortsWithStep) {
  auto train_set = synth_pairs(8, 16, 1);
  const auto val_set = synth_pairs(2, 16, 2);
  for (auto& p : train_set) p.image[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(small_config(), train_set, val_set);
    FAIL();
  } catch (const TrainingAborted& e) {
    EXPECT_EQ(e.step(), 1u);
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(Trainer, ObserverCanStopTheRun) {
  const auto train_set = synth_pairs(6, 16, 1);
  const auto val_set = synth_pairs(2, 16, 2);
  std::vector<std::uint64_t> seen;
  const TrainResult r = train(small_config(), train_set, val_set, [&](const TrainState&, const StepRecord& s) {
    seen.push_back(s.step);
    return s.step < 2;
  });
  EXPECT_TRUE(r.stopped_early);
  EXPECT_EQ(seen, (std::vector<std::uint64_t>{1, 2}));
}

TEST(Trainer, FromIndex) {
  oracle::TempDir dir("train_index");
  const auto tr = synth_generate(4, 16, 1);
  const auto va = synth_generate(2, 16, 2);
  DatasetIndex idx;
  for (auto& r : write_synthetic_split(tr, dir.path(), Split::Train)) idx.records.push_back(r);
  write_index(idx, dir.path() / "train_only.tsv");
  for (auto& r : write_synthetic_split(va, dir.path(), Split::Val)) idx.records.push_back(r);
  write_index(idx, dir.path() / "index.tsv");

  TrainConfig c = small_config();
  c.epochs = 1;
  EXPECT_EQ(train_from_index(c, dir.path() / "index.tsv").steps, 1u);
  EXPECT_THROW(train_from_index(c, dir.path() / "train_only.tsv"), ConfigError);
}
