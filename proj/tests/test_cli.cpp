#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "keynet/data.hpp"
#include "keynet/geometry.hpp"
#include "keynet/synth.hpp"
#include "test_util.hpp"

#ifndef KEYNET_CLI_PATH
#error "KEYNET_CLI_PATH must point at the built binary"
#endif

using namespace keynet;
namespace fs = std::filesystem;

namespace {

struct Invocation {
  int exit_code = -1;
  std::string output;
};

Invocation run_cli(const std::string& args, const fs::path& cwd) {
  const fs::path log = cwd / "cli_output.txt";
  const std::string cmd = "cd \"" + cwd.string() + "\" && \"" +
                          std::string(KEYNET_CLI_PATH) + "\" " + args + " > \"" +
                          log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Invocation inv;
  inv.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  inv.output.assign((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return inv;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST(Cli, ContourOnThreeByThreeBlock) {
  TempDir dir("keynet_cli_contour");
  BinaryMask mask(7, 7);
  for (int y = 2; y < 5; ++y)
    for (int x = 2; x < 5; ++x) mask.set(x, y);
  write_pgm(mask, (dir.path / "block.pgm").string());

  const auto inv = run_cli("contour --mask block.pgm --k 8 --out kp.knd",
                           dir.path);
  ASSERT_EQ(inv.exit_code, 0) << inv.output;

  std::ifstream in(dir.path / "kp.knd");
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  const json j = json::parse(line);
  EXPECT_EQ(j.at("type"), "object_keypoints");
  ASSERT_EQ(j.at("points").size(), 8u);
  // The eight samples of the ring contour are exactly the ring pixels.
  const Contour expected = trace_contour(mask, {2, 2});
  const auto pts = sample_equidistant(expected, 8);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_NEAR(j["points"][i][0].get<double>(), pts[i].x, 1e-6);
    EXPECT_NEAR(j["points"][i][1].get<double>(), pts[i].y, 1e-6);
  }
}

TEST(Cli, GradcheckMicroConfigPasses) {
  TempDir dir("keynet_cli_gradcheck");
  const auto inv = run_cli(
      "gradcheck --config " + std::string(KEYNET_CONFIG_DIR) + "/micro.cfg",
      dir.path);
  EXPECT_EQ(inv.exit_code, 0) << inv.output;
  EXPECT_NE(inv.output.find("PASS"), std::string::npos);
  EXPECT_EQ(inv.output.find("FAIL"), std::string::npos);
}

TEST(Cli, UnknownFlagExitsTwoWithUsage) {
  TempDir dir("keynet_cli_badflag");
  const auto inv = run_cli("contour --mask m.pgm --out o.knd --bogus 1",
                           dir.path);
  EXPECT_EQ(inv.exit_code, 2);
  EXPECT_NE(inv.output.find("error"), std::string::npos);
  EXPECT_NE(inv.output.find("help"), std::string::npos);
}

TEST(Cli, UnknownSubcommandExitsTwo) {
  TempDir dir("keynet_cli_badsub");
  const auto inv = run_cli("conjure --out x", dir.path);
  EXPECT_EQ(inv.exit_code, 2);
}

TEST(Cli, MissingInputExitsOneWithSingleLineReason) {
  TempDir dir("keynet_cli_missing");
  const auto inv = run_cli("track --in nope.knd --out t.knd", dir.path);
  EXPECT_EQ(inv.exit_code, 1);
  EXPECT_EQ(inv.output.rfind("error: ", 0), 0u) << inv.output;
  EXPECT_EQ(std::count(inv.output.begin(), inv.output.end(), '\n'), 1);
}

TEST(Cli, PipelineIsIdempotentAndMatchesInProcessComposition) {
  TempDir dir("keynet_cli_pipeline");
  // Small spec file.
  SynthSpec spec = testutil::four_class_spec(5, 3);
  std::ofstream(dir.path / "spec.knd") << canonical_line(to_json(spec)) << "\n";

  auto a = run_cli("synth --spec spec.knd --out data", dir.path);
  ASSERT_EQ(a.exit_code, 0) << a.output;
  const std::string train1 = slurp(dir.path / "data/train.knd");
  auto b = run_cli("synth --spec spec.knd --out data2", dir.path);
  ASSERT_EQ(b.exit_code, 0) << b.output;
  EXPECT_EQ(train1, slurp(dir.path / "data2/train.knd"));

  auto t1 = run_cli(
      "track --in data/val.knd --iou 0.5 --n 1 --out tracked.knd", dir.path);
  ASSERT_EQ(t1.exit_code, 0) << t1.output;
  auto t2 = run_cli(
      "track --in data/val.knd --iou 0.5 --n 1 --out tracked2.knd", dir.path);
  ASSERT_EQ(t2.exit_code, 0) << t2.output;
  EXPECT_EQ(slurp(dir.path / "tracked.knd"), slurp(dir.path / "tracked2.knd"));

  auto k1 = run_cli(
      "tokenize --in tracked.knd --grid 32x24 --frames 10 --n 1 --m 1 "
      "--out tokens.knd",
      dir.path);
  ASSERT_EQ(k1.exit_code, 0) << k1.output;

  // File-composed pipeline equals in-process composition on the same clips.
  ClipFile file = load_clips((dir.path / "data/val.knd").string());
  SceneConfig cfg;
  cfg.grid_w = 32;
  cfg.grid_h = 24;
  cfg.frames = 10;
  cfg.actors = 1;
  cfg.objects = 1;
  cfg.joints = file.header.joints;
  cfg.contour_points = file.header.contour_points;
  AssembleOptions opt;
  opt.base_dir = (dir.path / "data").string();
  const auto records = load_tokens((dir.path / "tokens.knd").string());
  ASSERT_EQ(records.size(), file.clips.size());
  for (std::size_t i = 0; i < file.clips.size(); ++i) {
    const TokenizedScene direct =
        tokenize_scene(assemble_scene(file.clips[i], file.header, cfg, opt),
                       cfg);
    EXPECT_EQ(records[i].tokens.position, direct.position) << i;
    EXPECT_EQ(records[i].tokens.type, direct.type) << i;
    EXPECT_EQ(records[i].tokens.segment, direct.segment) << i;
    EXPECT_EQ(records[i].tokens.instance, direct.instance) << i;
  }

  auto v = run_cli("viz-tokens --in tokens.knd --out scene.svg", dir.path);
  ASSERT_EQ(v.exit_code, 0) << v.output;
  const std::string svg = slurp(dir.path / "scene.svg");
  EXPECT_NE(svg.find("<svg"), std::string::npos);
  EXPECT_NE(svg.find("position token"), std::string::npos);
}

TEST(Cli, TrainEvalRoundTrip) {
  TempDir dir("keynet_cli_train");
  SynthSpec spec = testutil::four_class_spec(5, 4);
  spec.frames = 4;
  std::ofstream(dir.path / "spec.knd") << canonical_line(to_json(spec)) << "\n";
  ASSERT_EQ(run_cli("synth --spec spec.knd --out data", dir.path).exit_code, 0);

  std::ofstream(dir.path / "run.cfg")
      << "eta=0.002\niterations=5\nbatch_size=2\nseed=5\nd_model=8\nheads=2\n"
      << "layers=1\nintermediate=16\ndropout=0.0\nhead=video\nkind=flat\n"
      << "grid=32x24\nframes=4\nactors=1\nobjects=1\n";
  auto t = run_cli("train --data data --config run.cfg --out run", dir.path);
  ASSERT_EQ(t.exit_code, 0) << t.output;
  EXPECT_TRUE(fs::exists(dir.path / "run/ckpt_final.bin"));
  EXPECT_TRUE(fs::exists(dir.path / "run/metrics.csv"));
  {
    std::ifstream m(dir.path / "run/metrics.csv");
    std::string header;
    std::getline(m, header);
    EXPECT_EQ(header, "iter,lr,loss,metric");
  }
  auto e = run_cli("eval --data data --ckpt run/ckpt_final.bin --metric top1",
                   dir.path);
  ASSERT_EQ(e.exit_code, 0) << e.output;
  EXPECT_EQ(e.output.rfind("top1,", 0), 0u) << e.output;
}

TEST(Cli, FrameMapEvalEmitsPerClassAndMapLines) {
  TempDir dir("keynet_cli_framemap");
  SynthSpec spec = testutil::localization_spec(5, 3);
  spec.frames = 4;
  std::ofstream(dir.path / "spec.knd") << canonical_line(to_json(spec)) << "\n";
  ASSERT_EQ(run_cli("synth --spec spec.knd --out data", dir.path).exit_code, 0);

  std::ofstream(dir.path / "run.cfg")
      << "eta=0.002\niterations=3\nbatch_size=2\nseed=5\nd_model=8\nheads=2\n"
      << "layers=1\nintermediate=16\ndropout=0.0\nhead=actor\n"
      << "kind=hierarchical\ngrid=32x24\nframes=4\nactors=3\nobjects=0\n";
  auto t = run_cli("train --data data --config run.cfg --out run", dir.path);
  ASSERT_EQ(t.exit_code, 0) << t.output;
  auto e = run_cli(
      "eval --data data --ckpt run/ckpt_final.bin --metric framemap",
      dir.path);
  ASSERT_EQ(e.exit_code, 0) << e.output;
  // Per-class `name,ap` lines for classes with ground truth, then `mAP,`.
  EXPECT_NE(e.output.find("wave,"), std::string::npos) << e.output;
  std::istringstream lines(e.output);
  std::string line, last;
  while (std::getline(lines, line)) {
    if (!line.empty()) last = line;
    if (line.empty() || line.rfind("mAP,", 0) == 0) continue;
    EXPECT_NE(line.find(','), std::string::npos) << line;
  }
  EXPECT_EQ(last.rfind("mAP,", 0), 0u) << e.output;
}
