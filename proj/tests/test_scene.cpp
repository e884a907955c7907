#include <gtest/gtest.h>

#include <cmath>

#include "keynet/rng.hpp"
#include "keynet/scene.hpp"

using namespace keynet;

namespace {

SceneSequence empty_scene(const SceneConfig& cfg, double w = 320,
                          double h = 240) {
  SceneSequence s;
  s.width = w;
  s.height = h;
  s.frames = cfg.frames;
  s.joints = cfg.joints;
  s.keyframe = (cfg.frames + 1) / 2;
  return s;
}

SceneSequence random_scene(const SceneConfig& cfg, Rng& rng) {
  SceneSequence s = empty_scene(cfg, rng.uniform_int(64, 640),
                                rng.uniform_int(64, 480));
  s.keyframe = rng.uniform_int(1, cfg.frames);
  const int n_actors = rng.uniform_int(0, cfg.actors);
  for (int n = 0; n < n_actors; ++n) {
    ActorTrack track;
    track.joints.resize(static_cast<std::size_t>(cfg.frames) * cfg.joints);
    for (auto& kp : track.joints) {
      if (rng.bernoulli(0.8)) {
        kp = Keypoint::of(rng.uniform(-20.0, s.width + 20.0),
                          rng.uniform(-20.0, s.height + 20.0));
      }
    }
    s.actors.push_back(std::move(track));
  }
  const int n_objects = rng.uniform_int(0, cfg.objects);
  for (int j = 0; j < n_objects; ++j) {
    std::vector<Keypoint> pts(cfg.contour_points);
    for (auto& kp : pts) {
      if (rng.bernoulli(0.9)) {
        kp = Keypoint::of(rng.uniform(0.0, s.width),
                          rng.uniform(0.0, s.height));
      }
    }
    s.objects.push_back(std::move(pts));
  }
  return s;
}

// Brute-force oracle: each slot's tokens computed straight from the index
// arithmetic and the per-token formulas, independent of tokenize_scene.
TokenizedScene oracle_tokenize(const SceneSequence& s, const SceneConfig& c) {
  const int length = c.actors * c.frames * c.joints +
                     c.objects * c.contour_points;
  TokenizedScene out;
  out.position.assign(length, 0);
  out.type.assign(length, 0);
  out.segment.assign(length, 0);
  out.instance.assign(length, 0);
  out.mask.assign(length, 0);
  for (int idx = 0; idx < length; ++idx) {
    int pos_token = 0, type_token = 0, seg_token = 0, inst_token = 0;
    Keypoint kp;
    if (idx < c.actors * c.frames * c.joints) {
      const int n = idx / (c.frames * c.joints);
      const int t = (idx / c.joints) % c.frames;
      const int k = idx % c.joints;
      if (n < static_cast<int>(s.actors.size())) {
        kp = s.actors[n].joints[static_cast<std::size_t>(t) * c.joints + k];
        type_token = k + 1;
        seg_token = t + 1;
        inst_token = n + 1;
      }
    } else {
      const int rem = idx - c.actors * c.frames * c.joints;
      const int j = rem / c.contour_points;
      const int i = rem % c.contour_points;
      if (j < static_cast<int>(s.objects.size()) &&
          i < static_cast<int>(s.objects[j].size())) {
        kp = s.objects[j][i];
        type_token = c.joints + i + 1;
        seg_token = s.keyframe;
        inst_token = c.actors + j + 1;
      }
    }
    if (kp.valid) {
      const double x = std::min(std::max(kp.x, 0.0), s.width - 1e-9);
      const double y = std::min(std::max(kp.y, 0.0), s.height - 1e-9);
      int cx = static_cast<int>(std::floor(x * c.grid_w / s.width)) + 1;
      int cy = static_cast<int>(std::floor(y * c.grid_h / s.height)) + 1;
      cx = std::min(std::max(cx, 1), c.grid_w);
      cy = std::min(std::max(cy, 1), c.grid_h);
      pos_token = (cy - 1) * c.grid_w + cx;
      out.position[idx] = pos_token;
      out.type[idx] = type_token;
      out.segment[idx] = seg_token;
      out.instance[idx] = inst_token;
      out.mask[idx] = 1;
    }
  }
  return out;
}

}  // namespace

TEST(QuantizePosition, GoldenCells) {
  // Origin lands in cell (1,1).
  EXPECT_EQ(quantize_position(Keypoint::of(0, 0), 320, 240, 32, 24), 1);
  // Far corner lands in cell (32,24) -> token 768.
  EXPECT_EQ(quantize_position(Keypoint::of(319.9, 239.9), 320, 240, 32, 24),
            768);
  // Centre: cell (17,13) -> (13-1)*32+17 = 401.
  EXPECT_EQ(quantize_position(Keypoint::of(160, 120), 320, 240, 32, 24), 401);
}

TEST(QuantizePosition, InvalidKeypointIsPadding) {
  EXPECT_EQ(quantize_position(Keypoint::invalid(), 320, 240, 32, 24), 0);
}

TEST(QuantizePosition, ClampsOutOfImageCoordinates) {
  EXPECT_EQ(quantize_position(Keypoint::of(-50, -50), 320, 240, 32, 24), 1);
  EXPECT_EQ(quantize_position(Keypoint::of(1e6, 1e6), 320, 240, 32, 24), 768);
}

TEST(QuantizePosition, MonotoneAlongARow) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const double x1 = rng.uniform(0.0, 320.0);
    const double x2 = rng.uniform(x1, 320.0);
    const double y = rng.uniform(0.0, 240.0);
    const int t1 = quantize_position(Keypoint::of(x1, y), 320, 240, 32, 24);
    const int t2 = quantize_position(Keypoint::of(x2, y), 320, 240, 32, 24);
    EXPECT_LE(t1, t2);
    EXPECT_LE(t2, 32 * 24);
  }
}

TEST(TokenizeScene, IndexPatternGolden) {
  SceneConfig cfg;
  cfg.actors = 1;
  cfg.objects = 0;
  cfg.frames = 2;
  cfg.joints = 2;
  cfg.contour_points = 1;
  SceneSequence s = empty_scene(cfg);
  ActorTrack track;
  track.joints = {Keypoint::of(10, 10), Keypoint::of(20, 20),
                  Keypoint::of(30, 30), Keypoint::of(40, 40)};
  s.actors.push_back(track);
  TokenizedScene tok = tokenize_scene(s, cfg);
  EXPECT_EQ(tok.type, (std::vector<int>{1, 2, 1, 2}));
  EXPECT_EQ(tok.segment, (std::vector<int>{1, 1, 2, 2}));
  EXPECT_EQ(tok.instance, (std::vector<int>{1, 1, 1, 1}));
}

TEST(TokenizeScene, EmptySceneIsAllPadding) {
  SceneConfig cfg;
  cfg.actors = 2;
  cfg.objects = 1;
  cfg.frames = 3;
  cfg.joints = 4;
  cfg.contour_points = 5;
  SceneSequence s = empty_scene(cfg);
  TokenizedScene tok = tokenize_scene(s, cfg);
  EXPECT_EQ(tok.size(), static_cast<std::size_t>(cfg.sequence_length()));
  for (std::size_t i = 0; i < tok.size(); ++i) {
    EXPECT_EQ(tok.mask[i], 0);
    EXPECT_EQ(tok.position[i], 0);
    EXPECT_EQ(tok.type[i], 0);
    EXPECT_EQ(tok.segment[i], 0);
    EXPECT_EQ(tok.instance[i], 0);
  }
}

TEST(TokenizeScene, TwoActorsOneJointInstancePattern) {
  SceneConfig cfg;
  cfg.actors = 2;
  cfg.objects = 0;
  cfg.frames = 1;
  cfg.joints = 1;
  SceneSequence s = empty_scene(cfg);
  for (int n = 0; n < 2; ++n) {
    ActorTrack t;
    t.joints = {Keypoint::of(50 + n, 60)};
    s.actors.push_back(t);
  }
  TokenizedScene tok = tokenize_scene(s, cfg);
  EXPECT_EQ(tok.instance, (std::vector<int>{1, 2}));
}

TEST(TokenizeScene, AgreesWithBruteForceOracleOnFuzzedScenes) {
  Rng rng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    SceneConfig cfg;
    cfg.grid_w = rng.uniform_int(1, 40);
    cfg.grid_h = rng.uniform_int(1, 30);
    cfg.frames = rng.uniform_int(1, 6);
    cfg.actors = rng.uniform_int(1, 4);
    cfg.objects = rng.uniform_int(0, 3);
    cfg.joints = rng.uniform_int(1, 8);
    cfg.contour_points = rng.uniform_int(1, 6);
    SceneSequence s = random_scene(cfg, rng);
    TokenizedScene got = tokenize_scene(s, cfg);
    TokenizedScene want = oracle_tokenize(s, cfg);
    ASSERT_EQ(got.position, want.position) << "trial " << trial;
    ASSERT_EQ(got.type, want.type) << "trial " << trial;
    ASSERT_EQ(got.segment, want.segment) << "trial " << trial;
    ASSERT_EQ(got.instance, want.instance) << "trial " << trial;
    ASSERT_EQ(got.mask, want.mask) << "trial " << trial;
  }
}

TEST(TokenizeScene, TokenRangesAndPaddingAlignment) {
  Rng rng(321);
  for (int trial = 0; trial < 200; ++trial) {
    SceneConfig cfg;
    cfg.grid_w = rng.uniform_int(1, 33);
    cfg.grid_h = rng.uniform_int(1, 25);
    cfg.frames = rng.uniform_int(1, 8);
    cfg.actors = rng.uniform_int(1, 5);
    cfg.objects = rng.uniform_int(0, 3);
    cfg.joints = rng.uniform_int(1, 10);
    cfg.contour_points = rng.uniform_int(1, 8);
    SceneSequence s = random_scene(cfg, rng);
    TokenizedScene tok = tokenize_scene(s, cfg);
    for (std::size_t i = 0; i < tok.size(); ++i) {
      if (tok.mask[i]) {
        EXPECT_GE(tok.position[i], 1);
        EXPECT_LE(tok.position[i], cfg.grid_w * cfg.grid_h);
        EXPECT_GE(tok.type[i], 1);
        EXPECT_LE(tok.type[i], cfg.joints + cfg.contour_points);
        EXPECT_GE(tok.segment[i], 1);
        EXPECT_LE(tok.segment[i], cfg.frames);
        EXPECT_GE(tok.instance[i], 1);
        EXPECT_LE(tok.instance[i], cfg.actors + cfg.objects);
      } else {
        // Padding slots are zero in all four streams.
        EXPECT_EQ(tok.position[i], 0);
        EXPECT_EQ(tok.type[i], 0);
        EXPECT_EQ(tok.segment[i], 0);
        EXPECT_EQ(tok.instance[i], 0);
      }
    }
  }
}

TEST(Augment, FlipOfFlipIsIdentity) {
  SceneConfig cfg;
  cfg.actors = 1;
  cfg.frames = 2;
  cfg.joints = 4;
  SceneSequence s = empty_scene(cfg);
  ActorTrack track;
  track.joints = {Keypoint::of(10, 5), Keypoint::of(300, 7),
                  Keypoint::invalid(), Keypoint::of(100, 30),
                  Keypoint::of(11, 6), Keypoint::of(301, 8),
                  Keypoint::of(55, 66), Keypoint::invalid()};
  s.actors.push_back(track);
  s.objects.push_back({Keypoint::of(200, 100), Keypoint::of(210, 110)});
  const std::vector<int> swap = {1, 0, 3, 2};  // symmetric pairs
  SceneSequence twice = flip_scene(flip_scene(s, swap), swap);
  for (std::size_t i = 0; i < track.joints.size(); ++i) {
    const Keypoint& a = s.actors[0].joints[i];
    const Keypoint& b = twice.actors[0].joints[i];
    EXPECT_EQ(a.valid, b.valid);
    if (a.valid) {
      EXPECT_NEAR(a.x, b.x, 1e-9);
      EXPECT_NEAR(a.y, b.y, 1e-9);
    }
  }
}

TEST(Augment, FlipMapsXAcrossTheImage) {
  SceneConfig cfg;
  cfg.actors = 1;
  cfg.frames = 1;
  cfg.joints = 1;
  SceneSequence s = empty_scene(cfg);
  ActorTrack track;
  track.joints = {Keypoint::of(10, 42)};
  s.actors.push_back(track);
  SceneSequence flipped = flip_scene(s, {});
  EXPECT_DOUBLE_EQ(flipped.actors[0].joints[0].x, 310.0);
  EXPECT_DOUBLE_EQ(flipped.actors[0].joints[0].y, 42.0);
}

TEST(Augment, CropToLeftHalfInvalidatesRightHalfKeypoints) {
  SceneConfig cfg;
  cfg.actors = 1;
  cfg.frames = 1;
  cfg.joints = 2;
  SceneSequence s = empty_scene(cfg);
  ActorTrack track;
  track.joints = {Keypoint::of(40, 100), Keypoint::of(200, 100)};
  s.actors.push_back(track);
  SceneSequence cropped = rebase_scene(s, 0, 0, 160, 240);
  EXPECT_TRUE(cropped.actors[0].joints[0].valid);
  EXPECT_FALSE(cropped.actors[0].joints[1].valid);
  EXPECT_DOUBLE_EQ(cropped.actors[0].joints[1].x, 0.0);
  EXPECT_DOUBLE_EQ(cropped.actors[0].joints[1].y, 0.0);
}

TEST(Augment, ExpandKeepsEveryKeypointValid) {
  SceneConfig cfg;
  cfg.actors = 1;
  cfg.frames = 1;
  cfg.joints = 2;
  SceneSequence s = empty_scene(cfg);
  ActorTrack track;
  track.joints = {Keypoint::of(0, 0), Keypoint::of(319, 239)};
  s.actors.push_back(track);
  SceneSequence grown = rebase_scene(s, -30, -20, 480, 360);
  EXPECT_TRUE(grown.actors[0].joints[0].valid);
  EXPECT_TRUE(grown.actors[0].joints[1].valid);
  EXPECT_DOUBLE_EQ(grown.actors[0].joints[0].x, 30.0);
  EXPECT_DOUBLE_EQ(grown.actors[0].joints[1].y, 259.0);
}

TEST(WeightedSampler, BalancesNinetyTenSplit) {
  std::vector<int> labels;
  for (int i = 0; i < 90; ++i) labels.push_back(0);
  for (int i = 0; i < 10; ++i) labels.push_back(1);
  Rng rng(777);
  const auto draws = weighted_sample_indices(labels, 10000, rng);
  int minority = 0;
  for (std::size_t idx : draws) minority += labels[idx] == 1;
  const double share = minority / 10000.0;
  // Expected 0.5; 3 sigma of a fair binomial over 10k draws is ~0.015.
  EXPECT_NEAR(share, 0.5, 0.015);
}

TEST(WeightedSampler, SingleClassUniformCoverage) {
  std::vector<int> labels(7, 0);
  Rng rng(5);
  const auto draws = weighted_sample_indices(labels, 5000, rng);
  std::vector<int> counts(7, 0);
  for (std::size_t idx : draws) {
    ASSERT_LT(idx, labels.size());
    ++counts[idx];
  }
  for (int c : counts) EXPECT_GT(c, 0);
}

TEST(WeightedSampler, DeterministicUnderSeed) {
  std::vector<int> labels = {0, 0, 1, 2, 2, 2};
  Rng a(42), b(42);
  EXPECT_EQ(weighted_sample_indices(labels, 100, a),
            weighted_sample_indices(labels, 100, b));
}

TEST(WeightedSampler, RejectsEmptyDataset) {
  Rng rng(1);
  EXPECT_THROW(weighted_sample_indices({}, 10, rng), std::invalid_argument);
}
