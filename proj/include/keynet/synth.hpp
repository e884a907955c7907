#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "keynet/data.hpp"
#include "keynet/geometry.hpp"
#include "keynet/rng.hpp"

namespace keynet {

// Synthetic skeleton-action clips for desk-scale end-to-end runs. Motion
// patterns: translate (whole-body drift), wave (raised-arm oscillation),
// crouch (vertical compression), jump (single vertical arc) and reach (the
// right wrist converges on a target; an object contour can sit at a
// class-dependent offset from that target, which is what lets two reach
// classes share identical joint statistics and differ only in the object).
struct SynthClassSpec {
  std::string name;
  std::string pattern;  // translate | wave | crouch | jump | reach
  bool with_object = false;
  double object_dx = 0.0;  // object centre offset from the reach target
  double object_dy = 0.0;
};

struct SynthSpec {
  std::vector<SynthClassSpec> classes;
  int clips_per_class = 50;
  int frames = 10;
  double jitter = 1.5;
  std::uint64_t seed = 7;
  int actors = 1;            // 1: video labels; >1: per-actor labels
  std::string task = "video";  // "video" | "actor"
  int width = 320;
  int height = 240;
  int contour_points = 8;
  double fps = 10.0;

  void validate() const {
    if (classes.size() < 2) {
      throw std::invalid_argument("SynthSpec: need at least 2 classes");
    }
    if (clips_per_class < 1 || frames < 1 || actors < 1) {
      throw std::invalid_argument("SynthSpec: non-positive count");
    }
    if (task != "video" && task != "actor") {
      throw std::invalid_argument("SynthSpec: unknown task '" + task + "'");
    }
    for (const auto& c : classes) {
      if (c.pattern != "translate" && c.pattern != "wave" &&
          c.pattern != "crouch" && c.pattern != "jump" &&
          c.pattern != "reach") {
        throw std::invalid_argument("SynthSpec: unknown pattern '" +
                                    c.pattern + "'");
      }
    }
  }
};

namespace synth_detail {

constexpr int kJoints = 13;

// Offsets from the root (pelvis midpoint), y down. Order: head, shoulders,
// elbows, wrists, hips, knees, ankles, left before right.
inline const std::array<PointF, kJoints>& skeleton_template() {
  static const std::array<PointF, kJoints> t = {{{0, -72},
                                                 {-16, -52},
                                                 {16, -52},
                                                 {-24, -32},
                                                 {24, -32},
                                                 {-27, -12},
                                                 {27, -12},
                                                 {-10, 0},
                                                 {10, 0},
                                                 {-12, 26},
                                                 {12, 26},
                                                 {-13, 52},
                                                 {13, 52}}};
  return t;
}

inline std::vector<int> flip_permutation() {
  return {0, 2, 1, 4, 3, 6, 5, 8, 7, 10, 9, 12, 11};
}

struct ActorMotion {
  PointF base;
  std::string pattern;
  double phase = 0.0;
  double speed = 0.0;
  double dir_x = 1.0;
  double dir_y = 0.0;
  PointF reach_target;  // relative to the root, for "reach"
};

inline std::array<PointF, kJoints> joints_at(const ActorMotion& m, int t,
                                             int frames) {
  const double p = frames > 1 ? static_cast<double>(t) / (frames - 1) : 0.0;
  std::array<PointF, kJoints> out = skeleton_template();
  PointF root = m.base;
  if (m.pattern == "translate") {
    root.x += m.dir_x * m.speed * t;
    root.y += m.dir_y * m.speed * t;
  } else if (m.pattern == "wave") {
    // Right arm raised above the shoulder, hand sweeping side to side.
    const double theta = 2.0 * 3.14159265358979 * 1.6 * p + m.phase;
    out[4] = {22, -54};
    out[6] = {24 + 18 * std::sin(theta), -70 + 5 * std::cos(theta)};
  } else if (m.pattern == "crouch") {
    const double squeeze = 1.0 - 0.38 * p;
    for (auto& j : out) j.y *= squeeze;
    root.y += 22.0 * p;
  } else if (m.pattern == "jump") {
    root.y -= 38.0 * std::sin(3.14159265358979 * p);
  } else if (m.pattern == "reach") {
    const PointF rest_wrist = out[6], rest_elbow = out[4];
    out[6] = {rest_wrist.x + (m.reach_target.x - rest_wrist.x) * p,
              rest_wrist.y + (m.reach_target.y - rest_wrist.y) * p};
    const PointF mid{(m.reach_target.x + rest_elbow.x) * 0.55,
                     (m.reach_target.y + rest_elbow.y) * 0.55};
    out[4] = {rest_elbow.x + (mid.x - rest_elbow.x) * p,
              rest_elbow.y + (mid.y - rest_elbow.y) * p};
  }
  for (auto& j : out) {
    j.x += root.x;
    j.y += root.y;
  }
  return out;
}

inline BinaryMask circle_mask(int width, int height, double cx, double cy,
                              double radius) {
  BinaryMask m(width, height);
  const int x0 = std::max(0, static_cast<int>(cx - radius - 1));
  const int x1 = std::min(width - 1, static_cast<int>(cx + radius + 1));
  const int y0 = std::max(0, static_cast<int>(cy - radius - 1));
  const int y1 = std::min(height - 1, static_cast<int>(cy + radius + 1));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= radius * radius) m.set(x, y);
    }
  }
  return m;
}

}  // namespace synth_detail

struct SynthResult {
  DatasetHeader header;
  std::vector<ClipRecord> clips;
};

inline SynthResult generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  SynthResult out;
  out.header.joints = synth_detail::kJoints;
  out.header.contour_points = spec.contour_points;
  out.header.flip_permutation = synth_detail::flip_permutation();
  out.header.fps = spec.fps;
  out.header.width = spec.width;
  out.header.height = spec.height;
  for (const auto& c : spec.classes) out.header.classes.push_back(c.name);

  const int n_classes = static_cast<int>(spec.classes.size());
  int clip_counter = 0;
  for (int cls = 0; cls < n_classes; ++cls) {
    for (int rep = 0; rep < spec.clips_per_class; ++rep) {
      ClipRecord clip;
      char idbuf[32];
      std::snprintf(idbuf, sizeof(idbuf), "clip_%05d", clip_counter++);
      clip.id = idbuf;
      clip.width = spec.width;
      clip.height = spec.height;
      clip.fps = spec.fps;
      clip.keyframe = (spec.frames + 1) / 2;

      // Per-actor motion; single-actor clips follow the clip's class,
      // multi-actor clips draw one class per actor lane.
      std::vector<synth_detail::ActorMotion> motions;
      std::vector<int> actor_classes;
      for (int a = 0; a < spec.actors; ++a) {
        const int actor_cls =
            spec.actors == 1 ? cls : static_cast<int>(rng.uniform_index(n_classes));
        actor_classes.push_back(actor_cls);
        synth_detail::ActorMotion m;
        m.pattern = spec.classes[actor_cls].pattern;
        if (spec.actors == 1) {
          m.base = {rng.uniform(135, 185), rng.uniform(105, 140)};
        } else {
          const double lane =
              60.0 + 200.0 * a / std::max(1, spec.actors - 1);
          m.base = {lane + rng.uniform(-8, 8), rng.uniform(95, 150)};
        }
        m.phase = rng.uniform(0.0, 6.283185307179586);
        m.speed = rng.uniform(5.0, 8.0);
        const double alpha = rng.uniform(0.0, 6.283185307179586);
        m.dir_x = std::cos(alpha);
        m.dir_y = 0.3 * std::sin(alpha);
        m.reach_target = {60.0 + rng.uniform(-4, 4),
                          -45.0 + rng.uniform(-4, 4)};
        motions.push_back(m);
      }

      for (int t = 0; t < spec.frames; ++t) {
        FrameRecord frame;
        frame.index = t + 1;
        for (int a = 0; a < spec.actors; ++a) {
          const auto joints =
              synth_detail::joints_at(motions[a], t, spec.frames);
          DetRecord det;
          double min_x = 1e300, min_y = 1e300, max_x = -1e300, max_y = -1e300;
          for (const PointF& j : joints) {
            JointObs obs;
            obs.x = j.x + rng.normal(0.0, spec.jitter);
            obs.y = j.y + rng.normal(0.0, spec.jitter);
            obs.conf = rng.bernoulli(0.02) ? rng.uniform(0.0, 0.25)
                                           : rng.uniform(0.85, 1.0);
            det.joints.push_back(obs);
            min_x = std::min(min_x, obs.x);
            min_y = std::min(min_y, obs.y);
            max_x = std::max(max_x, obs.x);
            max_y = std::max(max_y, obs.y);
          }
          det.box = {min_x - 8, min_y - 8, max_x + 8, max_y + 8};
          det.score = rng.uniform(0.82, 0.98);
          frame.detections.push_back(std::move(det));
        }
        clip.frames.push_back(std::move(frame));
      }

      // Keyframe object for object-involved classes (single-actor task).
      if (spec.actors == 1 && spec.classes[cls].with_object) {
        const auto& m = motions[0];
        const double cx = m.base.x + m.reach_target.x +
                          spec.classes[cls].object_dx + rng.uniform(-4, 4);
        const double cy = m.base.y + m.reach_target.y +
                          spec.classes[cls].object_dy + rng.uniform(-4, 4);
        const double radius = rng.uniform(13.0, 18.0);
        ObjectEntry obj;
        obj.mask = synth_detail::circle_mask(spec.width, spec.height, cx, cy,
                                             radius);
        obj.has_mask = true;
        Pixel seed{-1, -1};
        for (int y = 0; y < obj.mask.height && seed.x < 0; ++y)
          for (int x = 0; x < obj.mask.width; ++x)
            if (obj.mask.at(x, y)) {
              seed = {x, y};
              break;
            }
        if (seed.x >= 0) {
          const Contour contour = trace_contour(obj.mask, seed);
          for (const PointF& p :
               sample_equidistant(contour, spec.contour_points)) {
            obj.points.push_back(Keypoint::of(p.x, p.y));
          }
          clip.objects.push_back(std::move(obj));
        }
      }

      if (spec.task == "video") {
        clip.video_label = cls;
      } else {
        // Ground truth per actor: the keyframe detection box and a one-hot
        // label over the class list.
        for (int a = 0; a < spec.actors; ++a) {
          ActorGt gt;
          gt.box = clip.frames[clip.keyframe - 1].detections[a].box;
          gt.labels.assign(n_classes, 0.0);
          gt.labels[actor_classes[a]] = 1.0;
          clip.actors.push_back(std::move(gt));
        }
      }
      out.clips.push_back(std::move(clip));
    }
  }
  return out;
}

inline json to_json(const SynthSpec& s) {
  json j;
  j["actors"] = s.actors;
  json classes = json::array();
  for (const auto& c : s.classes) {
    json jc;
    jc["name"] = c.name;
    jc["object"] = c.with_object;
    jc["object_dx"] = c.object_dx;
    jc["object_dy"] = c.object_dy;
    jc["pattern"] = c.pattern;
    classes.push_back(jc);
  }
  j["classes"] = classes;
  j["clips_per_class"] = s.clips_per_class;
  j["contour_points"] = s.contour_points;
  j["fps"] = s.fps;
  j["frames"] = s.frames;
  j["height"] = s.height;
  j["jitter"] = s.jitter;
  j["seed"] = static_cast<long long>(s.seed);
  j["task"] = s.task;
  j["type"] = "synth_spec";
  j["width"] = s.width;
  return j;
}

inline SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec s;
  s.actors = j.at("actors").get<int>();
  for (const json& jc : j.at("classes")) {
    SynthClassSpec c;
    c.name = jc.at("name").get<std::string>();
    c.pattern = jc.at("pattern").get<std::string>();
    c.with_object = jc.at("object").get<bool>();
    c.object_dx = jc.value("object_dx", 0.0);
    c.object_dy = jc.value("object_dy", 0.0);
    s.classes.push_back(std::move(c));
  }
  s.clips_per_class = j.at("clips_per_class").get<int>();
  s.contour_points = j.at("contour_points").get<int>();
  s.fps = j.at("fps").get<double>();
  s.frames = j.at("frames").get<int>();
  s.height = j.at("height").get<int>();
  s.jitter = j.at("jitter").get<double>();
  s.seed = static_cast<std::uint64_t>(j.at("seed").get<long long>());
  s.task = j.at("task").get<std::string>();
  s.width = j.at("width").get<int>();
  s.validate();
  return s;
}

inline SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_synth_spec: cannot open " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.at("type").get<std::string>() == "synth_spec") {
        return synth_spec_from_json(j);
      }
    } catch (const json::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
  throw std::runtime_error("load_synth_spec: no synth_spec record in " + path);
}

// Deterministic stratified split: within each class the last `val_fraction`
// of clips (by generation order) go to validation. Clips without a video
// label fall back to an index-stride split.
struct SplitResult {
  std::vector<ClipRecord> train;
  std::vector<ClipRecord> val;
};

inline SplitResult split_dataset(const std::vector<ClipRecord>& clips,
                                 double val_fraction) {
  SplitResult out;
  std::map<int, int> class_total, class_seen;
  for (const ClipRecord& c : clips) ++class_total[c.video_label];
  int index = 0;
  for (const ClipRecord& c : clips) {
    bool to_val;
    if (c.video_label >= 0) {
      const int total = class_total[c.video_label];
      const int n_val = std::max(1, static_cast<int>(total * val_fraction));
      to_val = class_seen[c.video_label]++ >= total - n_val;
    } else {
      const int stride =
          std::max(2, static_cast<int>(std::llround(1.0 / val_fraction)));
      to_val = index % stride == stride - 1;
    }
    (to_val ? out.val : out.train).push_back(c);
    ++index;
  }
  return out;
}

}  // namespace keynet
