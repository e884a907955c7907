#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "keynet/rng.hpp"

namespace keynet {

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  bool valid = false;

  static Keypoint invalid() { return {}; }
  static Keypoint of(double x, double y) { return {x, y, true}; }
};

// Token grid and sequence-capacity configuration. Vocabulary sizes derive
// from these: position W'*H', type k_h + k_o, segment T, instance N + M,
// each with id 0 reserved for padding.
struct SceneConfig {
  int grid_w = 32;   // W'
  int grid_h = 24;   // H'
  int frames = 10;   // T
  int actors = 5;    // N
  int objects = 3;   // M
  int joints = 17;   // k_h, keypoints per person
  int contour_points = 8;  // k_o, keypoints per object

  int position_vocab() const { return grid_w * grid_h + 1; }
  int type_vocab() const { return joints + contour_points + 1; }
  int segment_vocab() const { return frames + 1; }
  int instance_vocab() const { return actors + objects + 1; }
  int sequence_length() const {
    return actors * frames * joints + objects * contour_points;
  }

  void validate() const {
    if (grid_w < 1 || grid_h < 1 || frames < 1 || actors < 1 || objects < 0 ||
        joints < 1 || contour_points < 1) {
      throw std::invalid_argument("SceneConfig: non-positive field");
    }
  }
};

// One actor's joints over the clip: frames x joints, row-major.
struct ActorTrack {
  std::vector<Keypoint> joints;  // frames * joints_per_frame entries

  Keypoint& at(int frame, int joint, int joints_per_frame) {
    return joints[static_cast<std::size_t>(frame) * joints_per_frame + joint];
  }
  const Keypoint& at(int frame, int joint, int joints_per_frame) const {
    return joints[static_cast<std::size_t>(frame) * joints_per_frame + joint];
  }
};

struct ActorBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
};

// The raw representation of one clip: N actor tracks over T frames plus M
// object keypoint sets taken at the keyframe.
struct SceneSequence {
  double width = 0.0;
  double height = 0.0;
  int frames = 0;        // T
  int keyframe = 1;      // 1-based, within [1, frames]
  int joints = 0;        // k_h
  std::vector<ActorTrack> actors;
  std::vector<std::vector<Keypoint>> objects;  // each of size k_o
  int video_label = -1;
  std::vector<std::vector<double>> actor_labels;  // per actor, multi-hot
  std::vector<ActorBox> actor_boxes;              // keyframe box per actor

  void validate(const SceneConfig& cfg) const {
    if (static_cast<int>(actors.size()) > cfg.actors) {
      throw std::invalid_argument("SceneSequence: " +
                                  std::to_string(actors.size()) +
                                  " actors exceed configured " +
                                  std::to_string(cfg.actors));
    }
    if (static_cast<int>(objects.size()) > cfg.objects) {
      throw std::invalid_argument("SceneSequence: " +
                                  std::to_string(objects.size()) +
                                  " objects exceed configured " +
                                  std::to_string(cfg.objects));
    }
    if (frames != cfg.frames || joints != cfg.joints) {
      throw std::invalid_argument("SceneSequence: frames/joints " +
                                  std::to_string(frames) + "/" +
                                  std::to_string(joints) +
                                  " do not match config " +
                                  std::to_string(cfg.frames) + "/" +
                                  std::to_string(cfg.joints));
    }
    if (keyframe < 1 || keyframe > frames) {
      throw std::invalid_argument("SceneSequence: keyframe " +
                                  std::to_string(keyframe) + " outside [1," +
                                  std::to_string(frames) + "]");
    }
  }
};

// Four parallel integer token streams plus a validity mask. A masked-out
// slot is zero in all four streams.
struct TokenizedScene {
  std::vector<int> position;
  std::vector<int> type;
  std::vector<int> segment;
  std::vector<int> instance;
  std::vector<std::uint8_t> mask;

  std::size_t size() const { return position.size(); }
};

// Flat position token in [1, W'*H'] for a valid keypoint, 0 for an invalid
// one. Coordinates are clamped into the image before quantization.
inline int quantize_position(const Keypoint& kp, double width, double height,
                             int grid_w, int grid_h) {
  if (!kp.valid) return 0;
  const double x = std::clamp(kp.x, 0.0, width - 1e-9);
  const double y = std::clamp(kp.y, 0.0, height - 1e-9);
  int cx = static_cast<int>(std::floor(x / width * grid_w)) + 1;
  int cy = static_cast<int>(std::floor(y / height * grid_h)) + 1;
  cx = std::clamp(cx, 1, grid_w);
  cy = std::clamp(cy, 1, grid_h);
  return (cy - 1) * grid_w + cx;
}

// Emission order is person-major, frame-major within person, joint-major
// within frame, then objects. Joint k of person n at frame t gets
// (type k, segment t, instance n); contour point i of object j gets
// (type k_h + i, segment keyframe, instance N + j). Absent entries pad with
// zeros in all four streams.
inline TokenizedScene tokenize_scene(const SceneSequence& scene,
                                     const SceneConfig& cfg) {
  cfg.validate();
  scene.validate(cfg);
  TokenizedScene out;
  const int length = cfg.sequence_length();
  out.position.assign(length, 0);
  out.type.assign(length, 0);
  out.segment.assign(length, 0);
  out.instance.assign(length, 0);
  out.mask.assign(length, 0);

  int slot = 0;
  for (int n = 1; n <= cfg.actors; ++n) {
    const ActorTrack* track =
        n <= static_cast<int>(scene.actors.size()) ? &scene.actors[n - 1] : nullptr;
    for (int t = 1; t <= cfg.frames; ++t) {
      for (int k = 1; k <= cfg.joints; ++k, ++slot) {
        if (!track) continue;
        const Keypoint& kp = track->at(t - 1, k - 1, cfg.joints);
        if (!kp.valid) continue;
        out.position[slot] =
            quantize_position(kp, scene.width, scene.height, cfg.grid_w,
                              cfg.grid_h);
        out.type[slot] = k;
        out.segment[slot] = t;
        out.instance[slot] = n;
        out.mask[slot] = 1;
      }
    }
  }
  for (int j = 1; j <= cfg.objects; ++j) {
    const std::vector<Keypoint>* pts =
        j <= static_cast<int>(scene.objects.size()) ? &scene.objects[j - 1]
                                                    : nullptr;
    for (int i = 1; i <= cfg.contour_points; ++i, ++slot) {
      if (!pts || i > static_cast<int>(pts->size())) continue;
      const Keypoint& kp = (*pts)[i - 1];
      if (!kp.valid) continue;
      out.position[slot] = quantize_position(kp, scene.width, scene.height,
                                             cfg.grid_w, cfg.grid_h);
      out.type[slot] = cfg.joints + i;
      out.segment[slot] = scene.keyframe;
      out.instance[slot] = cfg.actors + j;
      out.mask[slot] = 1;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Keypoint-space augmentation.

struct AugmentPolicy {
  bool flip = false;
  bool crop = false;
  bool expand = false;
  double crop_min_scale = 0.6;
  double expand_max_scale = 1.5;
};

// Mirror in x (x -> width - x) and reorder joints by `joint_swap`, the
// dataset's left/right permutation. Empty permutation keeps joint order.
inline SceneSequence flip_scene(const SceneSequence& scene,
                                const std::vector<int>& joint_swap) {
  SceneSequence s = scene;
  const int kh = s.joints;
  for (ActorTrack& track : s.actors) {
    const int frames = static_cast<int>(track.joints.size()) / kh;
    for (int t = 0; t < frames; ++t) {
      std::vector<Keypoint> row(track.joints.begin() + t * kh,
                                track.joints.begin() + (t + 1) * kh);
      for (int k = 0; k < kh; ++k) {
        Keypoint kp = row[joint_swap.empty() ? k : joint_swap[k]];
        if (kp.valid) kp.x = s.width - kp.x;
        track.joints[t * kh + k] = kp;
      }
    }
  }
  for (auto& obj : s.objects)
    for (Keypoint& kp : obj)
      if (kp.valid) kp.x = s.width - kp.x;
  for (ActorBox& b : s.actor_boxes) {
    const double x1 = s.width - b.x2, x2 = s.width - b.x1;
    b.x1 = x1;
    b.x2 = x2;
  }
  return s;
}

// Shift the origin to (ox, oy) and clip to a new (nw, nh) canvas. Keypoints
// that land outside become invalid. Crop and expand are both rebases: crop
// uses a positive offset and a smaller canvas, expand a negative offset and
// a larger one.
inline SceneSequence rebase_scene(const SceneSequence& scene, double ox,
                                  double oy, double nw, double nh) {
  SceneSequence s = scene;
  auto move = [&](Keypoint& kp) {
    if (!kp.valid) return;
    const double x = kp.x - ox, y = kp.y - oy;
    if (x < 0.0 || y < 0.0 || x >= nw || y >= nh) {
      kp = Keypoint::invalid();
    } else {
      kp.x = x;
      kp.y = y;
    }
  };
  for (ActorTrack& track : s.actors)
    for (Keypoint& kp : track.joints) move(kp);
  for (auto& obj : s.objects)
    for (Keypoint& kp : obj) move(kp);
  for (ActorBox& b : s.actor_boxes) {
    b.x1 = std::clamp(b.x1 - ox, 0.0, nw);
    b.x2 = std::clamp(b.x2 - ox, 0.0, nw);
    b.y1 = std::clamp(b.y1 - oy, 0.0, nh);
    b.y2 = std::clamp(b.y2 - oy, 0.0, nh);
  }
  s.width = nw;
  s.height = nh;
  return s;
}

// Applies each enabled transform with probability 1/2. Flip mirrors x and
// swaps left/right joint slots via `joint_swap` (a permutation of joint
// indices); crop rebases into a random sub-rectangle and invalidates
// keypoints that fall outside; expand embeds the frame in a larger canvas.
// Labels are untouched.
inline SceneSequence augment(const SceneSequence& scene,
                             const AugmentPolicy& policy,
                             const std::vector<int>& joint_swap, Rng& rng) {
  SceneSequence out = scene;
  if (policy.flip && rng.bernoulli(0.5)) {
    out = flip_scene(out, joint_swap);
  }
  if (policy.crop && rng.bernoulli(0.5)) {
    const double scale = rng.uniform(policy.crop_min_scale, 1.0);
    const double nw = out.width * scale, nh = out.height * scale;
    const double ox = rng.uniform(0.0, out.width - nw);
    const double oy = rng.uniform(0.0, out.height - nh);
    out = rebase_scene(out, ox, oy, nw, nh);
  }
  if (policy.expand && rng.bernoulli(0.5)) {
    const double scale = rng.uniform(1.0, policy.expand_max_scale);
    const double nw = out.width * scale, nh = out.height * scale;
    const double ox = -rng.uniform(0.0, nw - out.width);
    const double oy = -rng.uniform(0.0, nh - out.height);
    out = rebase_scene(out, ox, oy, nw, nh);
  }
  return out;
}

// Class-balanced index draw: sample i is picked with probability
// proportional to 1 / frequency(class(i)), with replacement.
inline std::vector<std::size_t> weighted_sample_indices(
    const std::vector<int>& labels, std::size_t count, Rng& rng) {
  if (labels.empty()) {
    throw std::invalid_argument("weighted_sample_indices: empty dataset");
  }
  int max_label = 0;
  for (int l : labels) {
    if (l < 0) {
      throw std::invalid_argument("weighted_sample_indices: negative label " +
                                  std::to_string(l));
    }
    max_label = std::max(max_label, l);
  }
  std::vector<std::size_t> freq(static_cast<std::size_t>(max_label) + 1, 0);
  for (int l : labels) ++freq[static_cast<std::size_t>(l)];

  // Inverse-CDF over cumulative weights; kept explicit so the draw stream
  // is identical on every platform.
  std::vector<double> cum(labels.size());
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    total += 1.0 / static_cast<double>(freq[static_cast<std::size_t>(labels[i])]);
    cum[i] = total;
  }
  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = rng.uniform() * total;
    const auto it = std::upper_bound(cum.begin(), cum.end(), u);
    out.push_back(std::min<std::size_t>(
        static_cast<std::size_t>(it - cum.begin()), labels.size() - 1));
  }
  return out;
}

}  // namespace keynet
