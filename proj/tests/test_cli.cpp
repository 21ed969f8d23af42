#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "lldiff/cli/app.hpp"
#include "support/tempdir.hpp"

using namespace lldiff;
using lldiff::testkit::TempDir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "lldiff");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

const std::vector<std::string> kTinyModel = {"--set", "base_channels=4",  "--set", "channel_multipliers=1,2",
                                             "--set", "time_embed_dim=8", "--set", "batch_size=2",
                                             "--set", "diffusion_steps=4"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

int count_lines(const fs::path& p) {
  std::ifstream is(p);
  int n = 0;
  for (std::string line; std::getline(is, line);) ++n;
  return n;
}

// One small RGGB dataset shared by the command tests.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    const auto r = run_cli({"synth", "--out", (dir_->path() / "ds").string(), "--num-scenes", "4", "--set",
                            "height=16", "--set", "width=16", "--set", "ev_levels=-2,-4"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path ds() { return dir_->path() / "ds"; }
  static fs::path path(const std::string& name) { return dir_->path() / name; }

  static TempDir* dir_;
};

TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST(CliSynth, CountsLayoutAndDeterminism) {
  TempDir dir("cli_synth");
  const std::vector<std::string> common = {"synth", "--num-scenes", "8", "--seed", "7", "--set", "height=16",
                                           "--set", "width=16", "--set", "ev_levels=-2,-3,-4"};
  const auto a = run_cli(with(common, {"--out", (dir / "a").string()}));
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_NE(a.out.find("synthesized 8 scenes"), std::string::npos);
  EXPECT_NE(a.out.find("24 low-light inputs"), std::string::npos);
  const auto m = data::load_manifest(dir / "a" / "manifest.json");
  EXPECT_EQ(m.records.size(), 8u);
  for (const auto& r : m.records) EXPECT_EQ(r.low_light.size(), 3u);
  EXPECT_TRUE(fs::exists(dir / "a" / "resolved_config.txt"));

  ASSERT_EQ(run_cli(with(common, {"--out", (dir / "b").string()})).code, 0);
  EXPECT_EQ(io::checksum_tree(dir / "a"), io::checksum_tree(dir / "b"));

  ASSERT_EQ(run_cli(with(common, {"--out", (dir / "z").string(), "--set", "zooms=1,2,4", "--set", "height=32",
                                  "--set", "width=32"}))
                .code,
            0);
  for (const auto& r : data::load_manifest(dir / "z" / "manifest.json").records) EXPECT_EQ(r.ground_truth.size(), 3u);
}

TEST(CliSynth, ConfigFileAndOverridePrecedence) {
  TempDir dir("cli_cfg");
  std::ofstream(dir / "run.cfg") << "num_scenes = 3\nheight = 16\nwidth = 16\nev_levels = -1\n";
  const auto r = run_cli({"synth", "--config", (dir / "run.cfg").string(), "--set", "num_scenes=5", "--num-scenes",
                          "2", "--out", (dir / "o").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(data::load_manifest(dir / "o" / "manifest.json").records.size(), 2u);
  const std::string archived = io::read_file(dir / "o" / "resolved_config.txt");
  EXPECT_NE(archived.find("num_scenes = 2\n"), std::string::npos);
  EXPECT_NE(archived.find("iso = 800\n"), std::string::npos);  // defaults are archived too
  EXPECT_EQ(archived.find("out ="), std::string::npos);
}

TEST_F(Cli, TrainEmitsLossCsvAndCheckpoint) {
  const auto r = run_cli(with({"train", "--data", ds().string(), "--out", path("t").string(), "--steps", "3"}, kTinyModel));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(path("t") / "loss.csv"), 4);
  const auto s = load_checkpoint<float>(path("t") / "checkpoint.ckpt");
  EXPECT_TRUE(s.denoiser.uses_tmc());
  EXPECT_FALSE(s.pi.has_value());
  EXPECT_EQ(s.step, 3);
}

TEST_F(Cli, AblationAndConditionPresets) {
  auto r = run_cli(with({"train", "--data", ds().string(), "--out", path("nt").string(), "--steps", "1", "--ablate",
                         "no-tmc"},
                        kTinyModel));
  ASSERT_EQ(r.code, 0) << r.err;
  auto s = load_checkpoint<float>(path("nt") / "checkpoint.ckpt");
  EXPECT_FALSE(s.denoiser.config().tmc_enabled);
  EXPECT_EQ(s.config.tmc_mode, TmcMode::disabled);

  r = run_cli(with({"train", "--data", ds().string(), "--out", path("raw").string(), "--steps", "1", "--condition",
                    "raw"},
                   kTinyModel));
  ASSERT_EQ(r.code, 0) << r.err;
  s = load_checkpoint<float>(path("raw") / "checkpoint.ckpt");
  ASSERT_TRUE(s.pi.has_value());
  EXPECT_EQ(s.pi->config().upsample_factor, 2);
  EXPECT_NE(r.out.find("raw-tmc"), std::string::npos);
}

TEST_F(Cli, ResumeMatchesAnUninterruptedRun) {
  const std::vector<std::string> base = with({"train", "--data", ds().string(), "--steps", "4", "--set",
                                              "checkpoint_every=2"},
                                             kTinyModel);
  ASSERT_EQ(run_cli(with(base, {"--out", path("full").string()})).code, 0);
  const auto r = run_cli(with(base, {"--out", path("resumed").string(), "--resume",
                                     (path("full") / "checkpoint_step2.ckpt").string()}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(io::read_file(path("full") / "checkpoint.ckpt"), io::read_file(path("resumed") / "checkpoint.ckpt"));
}

TEST_F(Cli, SampleIsDeterministicAndTraced) {
  ASSERT_EQ(run_cli(with({"train", "--data", ds().string(), "--out", path("m").string(), "--steps", "2"}, kTinyModel))
                .code,
            0);
  const std::vector<std::string> base = {"sample", "--data", ds().string(), "--checkpoint",
                                         (path("m") / "checkpoint.ckpt").string()};
  const auto a = run_cli(with(base, {"--out", path("sa").string(), "--seed", "3"}));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(run_cli(with(base, {"--out", path("sb").string(), "--seed", "3"})).code, 0);
  EXPECT_EQ(io::checksum_tree(path("sa")), io::checksum_tree(path("sb")));

  // One PNG per test-split input.
  const auto m = data::load_manifest(ds() / "manifest.json");
  for (const auto* rec : m.split("test"))
    for (const auto& e : rec->low_light) EXPECT_TRUE(fs::exists(path("sa") / (data::entry_stem(*rec, e) + ".png")));

  ASSERT_EQ(run_cli(with(base, {"--out", path("sc").string(), "--seed", "4"})).code, 0);
  EXPECT_NE(io::checksum_tree(path("sa")), io::checksum_tree(path("sc")));

  ASSERT_EQ(run_cli(with(base, {"--out", path("st").string(), "--trace"})).code, 0);
  const auto* rec = m.split("test").front();
  const auto tdir = path("st") / "trace" / data::entry_stem(*rec, rec->low_light.front());
  int xs = 0, tmcs = 0;
  for (const auto& f : fs::directory_iterator(tdir)) (f.path().filename().string()[0] == 'x' ? xs : tmcs) += 1;
  EXPECT_EQ(xs, 5);  // x_4 ... x_0
  EXPECT_EQ(tmcs, 4);
  EXPECT_FALSE(fs::exists(path("sa") / "trace"));
}

TEST_F(Cli, EvalRowsAndSanity) {
  ASSERT_EQ(run_cli(with({"train", "--data", ds().string(), "--out", path("em").string(), "--steps", "1"}, kTinyModel))
                .code,
            0);
  ASSERT_EQ(run_cli({"sample", "--data", ds().string(), "--checkpoint", (path("em") / "checkpoint.ckpt").string(),
                     "--out", path("es").string()})
                .code,
            0);
  const auto r = run_cli({"eval", "--data", ds().string(), "--samples", path("es").string(), "--out", path("ev").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  // 1 test scene x 2 EVs x {ground_truth, exposure_rescale, srgb-tmc} + header
  EXPECT_EQ(count_lines(path("ev") / "eval.csv"), 1 + 6);
  std::ifstream is(path("ev") / "eval.csv");
  std::string header, first;
  std::getline(is, header);
  std::getline(is, first);
  EXPECT_EQ(header, "scene_id,ev,iso,zoom,method,psnr,ssim");
  EXPECT_NE(first.find(",ground_truth,99,1"), std::string::npos);
  EXPECT_NE(r.out.find("srgb-tmc,2,"), std::string::npos);
}

TEST_F(Cli, AnalyzeWritesEveryTable) {
  const auto r = run_cli({"analyze", "--data", ds().string(), "--out", path("an").string(), "--bins", "11"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(count_lines(path("an") / "degradation_report.csv"), 3);
  EXPECT_EQ(count_lines(path("an") / "stats_mu_sigma.csv"), 3);
  EXPECT_EQ(count_lines(path("an") / "stats_mu_sigma_srgb.csv"), 3);
  EXPECT_EQ(count_lines(path("an") / "gradient_histograms.csv"), 1 + 3 * 11);
  EXPECT_NE(r.out.find("note:"), std::string::npos);
}

TEST_F(Cli, FailuresPrintOneCodedLine) {
  auto one_line = [](const Outcome& o, const std::string& token) {
    EXPECT_NE(o.code, 0);
    EXPECT_EQ(o.err.rfind("error: " + token + ": ", 0), 0u) << o.err;
    EXPECT_EQ(std::count(o.err.begin(), o.err.end(), '\n'), 1) << o.err;
  };
  one_line(run_cli({}), "E_USAGE");
  one_line(run_cli({"fly"}), "E_USAGE");
  one_line(run_cli({"train", "--data", ds().string(), "--condition", "jpeg"}), "E_USAGE");
  one_line(run_cli({"train", "--data", path("absent").string()}), "E_IO");
  one_line(run_cli({"train"}), "E_CONFIG");
  one_line(run_cli({"synth", "--out", path("bad").string(), "--set", "iso=fast"}), "E_CONFIG");
  one_line(run_cli({"synth", "--out", path("bad").string(), "--set", "zooms=3"}), "E_INVALID_ARGUMENT");
  one_line(run_cli({"synth", "--out", path("bad").string(), "--set", "novalue"}), "E_CONFIG");
  one_line(run_cli({"sample", "--data", ds().string(), "--checkpoint", (ds() / "manifest.json").string()}),
           "E_FORMAT");
  one_line(run_cli({"eval", "--data", ds().string(), "--samples", path("nothing").string(), "--out",
                    path("e2").string()}),
           "E_IO");
}

TEST(CliHelp, ExitsZero) {
  const auto r = run_cli({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("synth"), std::string::npos);
}
