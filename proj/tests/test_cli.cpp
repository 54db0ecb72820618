#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <regex>

#include "lmnet/checkpoint.hpp"
#include "lmnet/dataset.hpp"
#include "oracles.hpp"

using namespace lmnet;
namespace fs = std::filesystem;

namespace {

struct CommandResult {
  int code = -1;
  std::string out;
  std::string err;
};

CommandResult run(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt";
  const fs::path err = scratch / "stderr.txt";
  const std::string cmd = args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  CommandResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file_bytes(out);
  r.err = read_file_bytes(err);
  return r;
}

std::string cli() { return LMNET_CLI_PATH; }
std::string synth() { return LMNET_SYNTH_PATH; }

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

class Cli : public ::testing::Test {
 protected:
  oracle::TempDir dir{"cli"};
  fs::path p(const std::string& name) const { return dir.path() / name; }
  CommandResult lmnet(const std::string& args) const { return run(cli() + " " + args, dir.path()); }

  void make_synthetic(const std::string& name, std::size_t size, std::size_t train, std::size_t val,
                      std::size_t test) const {
    const CommandResult r = run(synth() + " --out " + p(name).string() + " --size " + std::to_string(size) + " --train " +
                          std::to_string(train) + " --val " + std::to_string(val) + " --test " + std::to_string(test),
                      dir.path());
    ASSERT_EQ(r.code, 0) << r.err;
  }
};

}  // namespace

TEST_F(Cli, ParamsTotalsAgreeWithClosedFormScript) {
  std::size_t plain = 0, proposed = 0;
  for (const char* v : {"plain", "dilation", "residual", "proposed"}) {
    const CommandResult r = lmnet(std::string("params --variant ") + v);
    ASSERT_EQ(r.code, 0) << r.err;
    std::smatch m;
    ASSERT_TRUE(std::regex_search(r.out, m, std::regex("total parameters: (\\d+)")));
    const std::size_t total = std::stoull(m[1]);
    if (std::string(v) == "plain") plain = total;
    if (std::string(v) == "proposed") proposed = total;
    const CommandResult script = run(std::string("python3 ") + LMNET_CENSUS_SCRIPT + " --variant " + v, dir.path());
    ASSERT_EQ(script.code, 0) << script.err;
    EXPECT_TRUE(contains(script.out, "total " + std::to_string(total) + "\n")) << v << "\n" << script.out;
    EXPECT_TRUE(contains(r.out, "resolved config:\n  variant=" + std::string(v)));
  }
  EXPECT_EQ(proposed, 471515u);
  EXPECT_GT(proposed, plain);
}

TEST_F(Cli, ValidationErrorsExitWithOne) {
  CommandResult r = lmnet("params --variant unet");
  EXPECT_EQ(r.code, 1);
  for (const char* n : {"plain", "dilation", "residual", "proposed"}) EXPECT_TRUE(contains(r.err, n));
  r = lmnet("train --index " + p("missing.tsv").string() + " --lr=-1 --out " + p("o").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(contains(r.err, "lr must be a positive"));
  EXPECT_FALSE(fs::exists(p("o")));
  EXPECT_EQ(lmnet("train --index x --no-such-flag").code, 1);
  EXPECT_EQ(lmnet("").code, 1);
  EXPECT_EQ(lmnet("--help").code, 0);
}

TEST_F(Cli, GradcheckPasses) {
  const CommandResult r = lmnet("gradcheck --variant proposed");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(contains(r.out, "all tensors pass"));
  EXPECT_FALSE(contains(r.out, "FAIL"));
}

TEST_F(Cli, TrainEvalPredictRoundTrip) {
  make_synthetic("data", 32, 8, 2, 2);
  const std::string index = p("data/index.tsv").string();
  CommandResult r = lmnet("train --index " + index + " --variant plain --epochs 1 --batch 4 --micro-batch 2 --out " +
                p("run").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "input_height=32"));
  EXPECT_TRUE(contains(r.out, "variant=plain"));
  EXPECT_TRUE(contains(r.err, "step 2 epoch 1 loss"));
  for (const char* f : {"model_final.lmkn", "model_best.lmkn", "steps.csv", "validation.csv", "train_state.lmkt"}) {
    EXPECT_TRUE(fs::exists(p("run") / f)) << f;
  }

  r = lmnet("eval --ckpt " + (p("run") / "model_final.lmkn").string() + " --index " + index + " --split test");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "| Model 0 (Plain) | Test "));
  EXPECT_TRUE(contains(r.out, "samples=2\nsplit=test\n"));

  r = lmnet("eval --ckpt " + p("absent.lmkn").string() + " --index " + index);
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(contains(r.out, "Method"));

  const std::string image = p("data/test/images/synth_0.png").string();
  const std::string ckpt = (p("run") / "model_final.lmkn").string();
  r = lmnet("predict --ckpt " + ckpt + " --image " + image + " --out " + p("a.png").string());
  ASSERT_EQ(r.code, 0) << r.err;
  ASSERT_EQ(lmnet("predict --ckpt " + ckpt + " --image " + image + " --out " + p("b.png").string()).code, 0);
  EXPECT_EQ(read_file_bytes(p("a.png")), read_file_bytes(p("b.png")));
  EXPECT_EQ(read_file_bytes(p("a_prob.png")), read_file_bytes(p("b_prob.png")));
  const Image8 mask = read_image(p("a.png"));
  EXPECT_EQ(mask.width, 32u);
  EXPECT_EQ(mask.height, 32u);
  for (auto v : mask.pixels) ASSERT_TRUE(v == 0 || v == 255);

  Image8 odd{500, 500, 3, std::vector<std::uint8_t>(500 * 500 * 3, 90)};
  write_image(p("odd.png"), odd);
  r = lmnet("predict --ckpt " + ckpt + " --image " + p("odd.png").string() + " --out " + p("odd_mask.png").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "cropped 500x500 to 496x496"));
  EXPECT_EQ(read_image(p("odd_mask.png")).width, 496u);
  EXPECT_EQ(read_image(p("odd_mask_prob.png")).height, 496u);

  std::ofstream(p("junk.png")) << "not an image";
  EXPECT_EQ(lmnet("predict --ckpt " + ckpt + " --image " + p("junk.png").string() + " --out " +
                  p("j.png").string())
                .code,
            2);
}

TEST_F(Cli, EvalRejectsMismatchedImageSize) {
  make_synthetic("small", 32, 4, 1, 1);
  make_synthetic("large", 48, 1, 1, 1);
  ASSERT_EQ(lmnet("train --index " + p("small/index.tsv").string() +
                  " --variant plain --epochs 1 --batch 4 --micro-batch 4 --out " + p("run").string())
                .code,
            0);
  const CommandResult r = lmnet("eval --ckpt " + (p("run") / "model_final.lmkn").string() + " --index " +
                      p("large/index.tsv").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(contains(r.err, "expects 3x32x32 inputs"));
}

TEST_F(Cli, ConfigFileWithFlagOverrides) {
  make_synthetic("data", 16, 6, 1, 1);
  std::ofstream(p("run.cfg")) << "# dry run settings\nvariant=residual\nbatch_size=2\ntrain.epochs=3\n";
  const CommandResult r = lmnet("train --config " + p("run.cfg").string() + " --index " + p("data/index.tsv").string() +
                      " --batch 3 --dry-run");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "variant=residual"));
  EXPECT_TRUE(contains(r.out, "batch_size=3"));
  EXPECT_TRUE(contains(r.out, "epochs=3"));
  EXPECT_TRUE(contains(r.out, "planned optimizer steps: 6"));

  std::ofstream(p("bad.cfg")) << "colour=blue\n";
  EXPECT_EQ(lmnet("params --config " + p("bad.cfg").string()).code, 1);
}

TEST_F(Cli, FullSizedDryRun) {
  DatasetIndex index;
  const auto one = synth_generate(1, 8, 1);
  for (Split s : kAllSplits) {
    const std::size_t n = s == Split::Train ? 600 : (s == Split::Val ? 63 : 26);
    std::vector<SynthSample> copies(n, one.front());
    for (auto& rec : write_synthetic_split(copies, p("full"), s)) index.records.push_back(rec);
  }
  write_index(index, p("full/index.tsv"));
  const CommandResult r = lmnet("train --index " + p("full/index.tsv").string() + " --variant proposed --dry-run");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "batch_size=200"));
  EXPECT_TRUE(contains(r.out, "epochs=10"));
  EXPECT_TRUE(contains(r.out, "lr=0.005"));
  EXPECT_TRUE(contains(r.out, "planned optimizer steps: 30"));
}

TEST_F(Cli, PrepareOneSceneIntoNineTiles) {
  Image8 img{1500, 1500, 3, std::vector<std::uint8_t>(1500 * 1500 * 3, 120)};
  Image8 mask{1500, 1500, 1, std::vector<std::uint8_t>(1500 * 1500, 0)};
  for (std::size_t y = 0; y < 1500; ++y) {
    for (std::size_t x = 0; x < 1500; x += 3) mask.pixels[y * 1500 + x] = 255;
  }
  fs::create_directories(p("raw/train/images"));
  fs::create_directories(p("raw/train/masks"));
  write_image(p("raw/train/images/scene.png"), img);
  write_image(p("raw/train/masks/scene.png"), mask);

  const std::string base = "prepare --input-dir " + p("raw").string() + " --output-dir " + p("prepared").string();
  CommandResult r = lmnet(base + " --min-fg 0 --max-fg 1");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(contains(r.out, "train        1     9         0"));
  const DatasetIndex index = read_index(p("prepared/index.tsv"));
  EXPECT_EQ(index.count(Split::Train), 9u);
  EXPECT_EQ(read_image(p("prepared/train/images/scene_r2c2.png")).width, 192u);

  r = lmnet(base);
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(contains(r.err, "--overwrite"));
  EXPECT_EQ(lmnet(base + " --overwrite").code, 0);

  fs::create_directories(p("empty"));
  r = lmnet("prepare --input-dir " + p("empty").string() + " --output-dir " + p("nothing").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(p("nothing")));
}
