#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "keynet/synth.hpp"
#include "keynet/train.hpp"
#include "test_util.hpp"

using namespace keynet;
namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

ModelConfig small_model_config(const SceneConfig& sc, int classes) {
  ModelConfig cfg;
  cfg.scene = sc;
  cfg.d_model = 16;
  cfg.heads = 2;
  cfg.layers = 1;
  cfg.intermediate = 32;
  cfg.dropout = 0.0;
  cfg.classes = classes;
  cfg.head = HeadMode::video;
  cfg.kind = ModelKind::flat;
  return cfg;
}

SceneConfig small_scene_config(int frames, int actors, int objects) {
  SceneConfig sc;
  sc.grid_w = 32;
  sc.grid_h = 24;
  sc.frames = frames;
  sc.actors = actors;
  sc.objects = objects;
  sc.joints = 13;
  sc.contour_points = 8;
  return sc;
}

}  // namespace

TEST(Schedule, WarmupAndDecayGoldens) {
  TrainConfig cfg;
  cfg.eta = 1e-4;
  cfg.total_iterations = 1000;
  cfg.warmup_fraction = 0.01;
  EXPECT_DOUBLE_EQ(lr_at(10, cfg), 1e-4);  // warmup endpoint, w = 10
  EXPECT_DOUBLE_EQ(lr_at(1000, cfg), 0.0);
  EXPECT_DOUBLE_EQ(lr_at(505, cfg), 1e-4 * (1.0 - 495.0 / 990.0));
  EXPECT_DOUBLE_EQ(lr_at(505, cfg), 0.5e-4);
}

TEST(Schedule, PiecewiseLinearContinuousPeaksAtEta) {
  TrainConfig cfg;
  cfg.eta = 3e-3;
  cfg.total_iterations = 400;
  cfg.warmup_fraction = 0.05;  // w = 20
  double peak = 0.0;
  for (long i = 0; i <= 400; ++i) peak = std::max(peak, lr_at(i, cfg));
  EXPECT_DOUBLE_EQ(peak, cfg.eta);
  EXPECT_DOUBLE_EQ(lr_at(0, cfg), 0.0);
  // Continuity: adjacent iterations differ by one of the two slopes.
  const double up = cfg.eta / 20.0, down = cfg.eta / 380.0;
  for (long i = 1; i <= 400; ++i) {
    const double step = lr_at(i, cfg) - lr_at(i - 1, cfg);
    EXPECT_TRUE(std::abs(step - up) < 1e-15 || std::abs(step + down) < 1e-15)
        << "iteration " << i;
  }
  EXPECT_THROW(lr_at(401, cfg), std::invalid_argument);
}

TEST(TrainStep, ZeroLearningRateLeavesParametersBitExact) {
  SceneConfig sc = small_scene_config(4, 1, 1);
  ModelConfig mc = small_model_config(sc, 4);
  KeyNetModel model = KeyNetModel::build(mc, 3);
  SynthSpec spec = testutil::four_class_spec(13, 2);
  spec.frames = 4;
  SynthResult synth = generate_synthetic(spec);
  ClipFile file{synth.header, true, synth.clips};
  TrainDataset data = build_dataset(file, sc);

  TrainConfig tc;
  Rng rng(1);
  Batch batch = make_batch(data, {0, 1, 2}, tc, rng, false, mc.classes);
  const auto before = [&] {
    std::vector<std::vector<double>> copy;
    for (Tensor& p : model.parameters()) copy.push_back(*p.data);
    return copy;
  }();
  AdamState opt = AdamState::init(model.parameters());
  DropoutState drop;
  train_step(model, batch, opt, 0.0, drop);
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    EXPECT_EQ(*model.parameters()[i].data, before[i]) << "param " << i;
  }
}

TEST(TrainStep, OverfitsOneFixedMicroBatch) {
  SceneConfig sc = small_scene_config(4, 1, 1);
  ModelConfig mc = small_model_config(sc, 4);
  KeyNetModel model = KeyNetModel::build(mc, 5);
  SynthSpec spec = testutil::four_class_spec(17, 1);
  spec.frames = 4;
  SynthResult synth = generate_synthetic(spec);
  ClipFile file{synth.header, true, synth.clips};
  TrainDataset data = build_dataset(file, sc);

  TrainConfig tc;
  Rng rng(2);
  Batch batch = make_batch(data, {0, 1, 2, 3}, tc, rng, false, mc.classes);
  AdamState opt = AdamState::init(model.parameters());
  DropoutState drop;
  double prev = 1e300;
  double loss = prev;
  for (int step = 0; step < 200; ++step) {
    loss = train_step(model, batch, opt, 3e-3, drop).loss;
    EXPECT_LT(loss, prev * 1.01) << "step " << step;  // <1% upticks allowed
    prev = loss;
    if (loss < 0.01) break;
  }
  EXPECT_LT(loss, 0.01);
}

TEST(TrainStep, DeterministicLossTrace) {
  SceneConfig sc = small_scene_config(4, 1, 1);
  ModelConfig mc = small_model_config(sc, 4);
  SynthSpec spec = testutil::four_class_spec(19, 2);
  spec.frames = 4;
  SynthResult synth = generate_synthetic(spec);
  ClipFile file{synth.header, true, synth.clips};
  TrainDataset data = build_dataset(file, sc);

  auto run = [&] {
    KeyNetModel model = KeyNetModel::build(mc, 9);
    TrainConfig tc;
    Rng rng(3);
    Batch batch = make_batch(data, {0, 1, 2, 3}, tc, rng, false, mc.classes);
    AdamState opt = AdamState::init(model.parameters());
    DropoutState drop;
    std::vector<double> trace;
    for (int step = 0; step < 10; ++step) {
      trace.push_back(train_step(model, batch, opt, 1e-3, drop).loss);
    }
    return trace;
  };
  EXPECT_EQ(run(), run());
}

TEST(TrainStep, NonFiniteLossAbortsWithDiagnostics) {
  SceneConfig sc = small_scene_config(4, 1, 1);
  ModelConfig mc = small_model_config(sc, 4);
  KeyNetModel model = KeyNetModel::build(mc, 3);
  // Poison the head so logits overflow into non-finite loss territory.
  for (double& v : *model.head_w.data) v = 1e308;
  SynthSpec spec = testutil::four_class_spec(13, 1);
  spec.frames = 4;
  SynthResult synth = generate_synthetic(spec);
  ClipFile file{synth.header, true, synth.clips};
  TrainDataset data = build_dataset(file, sc);
  TrainConfig tc;
  Rng rng(1);
  Batch batch = make_batch(data, {0}, tc, rng, false, mc.classes);
  AdamState opt = AdamState::init(model.parameters());
  DropoutState drop;
  try {
    train_step(model, batch, opt, 1e-3, drop);
    FAIL() << "expected non-finite loss abort";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite"), std::string::npos);
  }
}

TEST(TrainLoop, ZeroIterationsWritesInitialCheckpointOnly) {
  const fs::path dir = fs::temp_directory_path() / "keynet_train0";
  fs::remove_all(dir);
  SceneConfig sc = small_scene_config(4, 1, 1);
  ModelConfig mc = small_model_config(sc, 4);
  KeyNetModel model = KeyNetModel::build(mc, 1);
  SynthSpec spec = testutil::four_class_spec(23, 1);
  spec.frames = 4;
  SynthResult synth = generate_synthetic(spec);
  ClipFile file{synth.header, true, synth.clips};
  TrainDataset data = build_dataset(file, sc);
  TrainConfig tc;
  tc.total_iterations = 0;
  TrainResult r = train_loop(data, model, tc, dir.string());
  int checkpoints = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".bin") ++checkpoints;
  }
  EXPECT_EQ(checkpoints, 1);
  EXPECT_TRUE(r.log.empty());
  EXPECT_TRUE(fs::exists(r.metrics_path));
  fs::remove_all(dir);
}

TEST(TrainLoop, DeterministicLogsAndFinalCheckpoint) {
  SceneConfig sc = small_scene_config(4, 1, 1);
  ModelConfig mc = small_model_config(sc, 4);
  SynthSpec spec = testutil::four_class_spec(29, 4);
  spec.frames = 4;
  SynthResult synth = generate_synthetic(spec);
  ClipFile file{synth.header, true, synth.clips};
  TrainDataset data = build_dataset(file, sc);

  auto run = [&](const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("keynet_det_" + tag);
    fs::remove_all(dir);
    KeyNetModel model = KeyNetModel::build(mc, 11);
    TrainConfig tc;
    tc.total_iterations = 8;
    tc.batch_size = 4;
    tc.seed = 77;
    tc.eta = 1e-3;
    tc.warmup_fraction = 0.25;
    tc.augment.flip = true;
    tc.sampler = SamplerMode::balanced;
    TrainResult r = train_loop(data, model, tc, dir.string());
    std::pair<std::string, std::string> out{slurp(r.metrics_path),
                                            slurp(r.final_checkpoint)};
    fs::remove_all(dir);
    return out;
  };
  const auto a = run("a");
  const auto b = run("b");
  EXPECT_EQ(a.first, b.first);
  EXPECT_FALSE(a.second.empty());
  EXPECT_EQ(a.second, b.second);
}

TEST(TrainLoop, BalancedSamplerLiftsMinorityRecall) {
  // 9:1 imbalanced two-class training set; minority recall is measured on an
  // independent balanced set after identical budgets with uniform vs
  // class-balanced sampling.
  SynthSpec spec;
  spec.classes = {
      {"translate", "translate", false, 0.0, 0.0},
      {"wave", "wave", false, 0.0, 0.0},
  };
  spec.clips_per_class = 100;  // trimmed below to 90/10
  spec.frames = 5;
  spec.jitter = 1.2;
  spec.seed = 41;
  SynthResult synth = generate_synthetic(spec);
  std::vector<ClipRecord> clips;
  int majority = 0, minority = 0;
  for (const ClipRecord& c : synth.clips) {
    if (c.video_label == 0 && majority < 90) {
      clips.push_back(c);
      ++majority;
    } else if (c.video_label == 1 && minority < 10) {
      clips.push_back(c);
      ++minority;
    }
  }
  SynthSpec eval_spec = spec;
  eval_spec.clips_per_class = 25;
  eval_spec.seed = 999;
  SynthResult eval_synth = generate_synthetic(eval_spec);

  SceneConfig sc = small_scene_config(5, 1, 0);
  ClipFile train_file{synth.header, true, clips};
  ClipFile val_file{eval_synth.header, true, eval_synth.clips};
  TrainDataset train_data = build_dataset(train_file, sc);
  TrainDataset val_data = build_dataset(val_file, sc);

  auto minority_recall = [&](SamplerMode mode) {
    ModelConfig mc = small_model_config(sc, 2);
    KeyNetModel model = KeyNetModel::build(mc, 13);
    TrainConfig tc;
    tc.total_iterations = 120;
    tc.batch_size = 8;
    tc.eta = 2e-3;
    tc.warmup_fraction = 0.05;
    tc.seed = 5;
    tc.sampler = mode;
    train_loop(train_data, model, tc);
    DropoutState drop;
    int hit = 0, total = 0;
    for (std::size_t i = 0; i < val_data.scenes.size(); ++i) {
      if (val_data.video_labels[i] != 1) continue;
      ++total;
      const TokenizedScene tok =
          tokenize_scene(val_data.scenes[i], val_data.scene_cfg);
      ForwardResult r = model_forward(model, tok, drop);
      hit += classify_video(r.logits) == 1;
    }
    return total ? static_cast<double>(hit) / total : 0.0;
  };

  const double uniform = minority_recall(SamplerMode::uniform);
  const double balanced = minority_recall(SamplerMode::balanced);
  EXPECT_GT(balanced, uniform);
  EXPECT_GE(balanced, 0.2);
}

TEST(RunConfig, ParsesAllKeysAndReportsBadLines) {
  const std::string text =
      "eta=0.002\n"
      "iterations=123\n"
      "warmup_fraction=0.05\n"
      "batch_size=8\n"
      "seed=99\n"
      "flip=1\n"
      "crop=0\n"
      "expand=1\n"
      "sampler=balanced\n"
      "grad_clip=1.5\n"
      "d_model=32\n"
      "heads=4\n"
      "layers=3\n"
      "intermediate=64\n"
      "dropout=0.1\n"
      "classes=7\n"
      "head=actor\n"
      "kind=hierarchical\n"
      "grid=16x12\n"
      "frames=6\n"
      "actors=2\n"
      "objects=1\n"
      "joints=13\n"
      "contour_points=8\n"
      "# trailing comment\n";
  RunConfig rc = parse_run_config_text(text);
  EXPECT_DOUBLE_EQ(rc.train.eta, 0.002);
  EXPECT_EQ(rc.train.total_iterations, 123);
  EXPECT_EQ(rc.train.batch_size, 8);
  EXPECT_EQ(rc.train.seed, 99u);
  EXPECT_TRUE(rc.train.augment.flip);
  EXPECT_FALSE(rc.train.augment.crop);
  EXPECT_TRUE(rc.train.augment.expand);
  EXPECT_EQ(rc.train.sampler, SamplerMode::balanced);
  EXPECT_DOUBLE_EQ(rc.train.grad_clip, 1.5);
  EXPECT_EQ(rc.model.d_model, 32);
  EXPECT_EQ(rc.model.heads, 4);
  EXPECT_EQ(rc.model.classes, 7);
  EXPECT_EQ(rc.model.head, HeadMode::actor);
  EXPECT_EQ(rc.model.kind, ModelKind::hierarchical);
  EXPECT_EQ(rc.model.scene.grid_w, 16);
  EXPECT_EQ(rc.model.scene.grid_h, 12);
  EXPECT_EQ(rc.model.scene.frames, 6);

  try {
    parse_run_config_text("eta=0.1\nmystery=1\n");
    FAIL() << "expected unknown-key error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("mystery"), std::string::npos);
  }
}
