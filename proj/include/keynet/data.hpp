#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "keynet/geometry.hpp"
#include "keynet/scene.hpp"
#include "keynet/tracking.hpp"

namespace keynet {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Canonical serialization: keys sorted (nlohmann objects are ordered maps),
// floating values fixed to six decimals, integers printed as integers. Every
// writer goes through canonical_dump so files are byte-stable.

namespace detail {

inline void canonical_dump(const json& j, std::string& out) {
  switch (j.type()) {
    case json::value_t::object: {
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        out += json(it.key()).dump();
        out += ':';
        canonical_dump(it.value(), out);
      }
      out += '}';
      break;
    }
    case json::value_t::array: {
      out += '[';
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i) out += ',';
        canonical_dump(j[i], out);
      }
      out += ']';
      break;
    }
    case json::value_t::number_float: {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.6f", j.get<double>());
      out += buf;
      break;
    }
    default:
      out += j.dump();
  }
}

}  // namespace detail

inline std::string canonical_line(const json& j) {
  std::string out;
  detail::canonical_dump(j, out);
  return out;
}

// ---------------------------------------------------------------------------
// Record types of the .knd line-delimited format.

struct DatasetHeader {
  std::vector<std::string> classes;
  int joints = 0;           // k_h
  int contour_points = 8;   // k_o
  std::vector<int> flip_permutation;
  double fps = 10.0;
  int width = 320;
  int height = 240;
};

struct JointObs {
  double x = 0.0;
  double y = 0.0;
  double conf = 1.0;
};

struct DetRecord {
  Box box;
  double score = 0.0;
  int track = -1;  // -1: unassigned, filled in by the tracker
  std::vector<JointObs> joints;
};

struct FrameRecord {
  int index = 0;  // 1-based
  std::vector<DetRecord> detections;
};

struct ObjectEntry {
  std::string mask_path;         // when set, points come from the PGM file
  std::vector<Keypoint> points;  // otherwise inline contour keypoints
  BinaryMask mask;               // in-memory only, never serialized
  bool has_mask = false;
};

struct ActorGt {
  Box box;                     // keyframe box
  std::vector<double> labels;  // multi-hot over header classes
};

struct ClipRecord {
  std::string id;
  int width = 0;
  int height = 0;
  double fps = 0.0;
  std::vector<FrameRecord> frames;
  std::vector<ObjectEntry> objects;  // keyframe objects
  int keyframe = 1;
  int video_label = -1;
  std::vector<ActorGt> actors;  // ground truth for localization tasks
};

// ---------------------------------------------------------------------------
// JSON encoding.

inline json to_json(const DatasetHeader& h) {
  json j;
  j["classes"] = h.classes;
  j["contour_points"] = h.contour_points;
  j["flip_permutation"] = h.flip_permutation;
  j["fps"] = h.fps;
  j["height"] = h.height;
  j["joints"] = h.joints;
  j["type"] = "header";
  j["width"] = h.width;
  return j;
}

inline json box_json(const Box& b) {
  return json::array({b.x1, b.y1, b.x2, b.y2});
}

inline json to_json(const ClipRecord& c) {
  json j;
  json actors = json::array();
  for (const ActorGt& a : c.actors) {
    json ja;
    ja["box"] = box_json(a.box);
    json labels = json::array();
    for (double v : a.labels) labels.push_back(static_cast<int>(v));
    ja["labels"] = labels;
    actors.push_back(ja);
  }
  j["actors"] = actors;
  j["fps"] = c.fps;
  json frames = json::array();
  for (const FrameRecord& f : c.frames) {
    json jf;
    json dets = json::array();
    for (const DetRecord& d : f.detections) {
      json jd;
      jd["box"] = box_json(d.box);
      json joints = json::array();
      for (const JointObs& p : d.joints)
        joints.push_back(json::array({p.x, p.y, p.conf}));
      jd["joints"] = joints;
      jd["score"] = d.score;
      jd["track"] = d.track;
      dets.push_back(jd);
    }
    jf["detections"] = dets;
    jf["index"] = f.index;
    frames.push_back(jf);
  }
  j["frames"] = frames;
  j["height"] = c.height;
  j["id"] = c.id;
  j["keyframe"] = c.keyframe;
  j["label"] = c.video_label;
  json objects = json::array();
  for (const ObjectEntry& o : c.objects) {
    json jo;
    if (!o.mask_path.empty()) {
      jo["mask"] = o.mask_path;
    } else {
      json pts = json::array();
      for (const Keypoint& p : o.points) pts.push_back(json::array({p.x, p.y}));
      jo["points"] = pts;
    }
    objects.push_back(jo);
  }
  j["objects"] = objects;
  j["type"] = "clip";
  j["width"] = c.width;
  return j;
}

// ---------------------------------------------------------------------------
// Parsing with per-line diagnostics.

namespace detail {

[[noreturn]] inline void fail_line(const std::string& path, int line,
                                   const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line) + ": " + what);
}

inline DatasetHeader header_from_json(const json& j) {
  DatasetHeader h;
  h.classes = j.at("classes").get<std::vector<std::string>>();
  h.contour_points = j.at("contour_points").get<int>();
  h.flip_permutation = j.at("flip_permutation").get<std::vector<int>>();
  h.fps = j.at("fps").get<double>();
  h.height = j.at("height").get<int>();
  h.joints = j.at("joints").get<int>();
  h.width = j.at("width").get<int>();
  return h;
}

inline Box box_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) {
    throw std::runtime_error("box must be [x1,y1,x2,y2]");
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
          j[3].get<double>()};
}

inline ClipRecord clip_from_json(const json& j, const DatasetHeader& header) {
  ClipRecord c;
  c.id = j.at("id").get<std::string>();
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.fps = j.at("fps").get<double>();
  c.keyframe = j.at("keyframe").get<int>();
  c.video_label = j.at("label").get<int>();
  if (c.video_label >= static_cast<int>(header.classes.size())) {
    throw std::runtime_error("label " + std::to_string(c.video_label) +
                             " outside declared class list of " +
                             std::to_string(header.classes.size()));
  }
  for (const json& jf : j.at("frames")) {
    FrameRecord f;
    f.index = jf.at("index").get<int>();
    for (const json& jd : jf.at("detections")) {
      DetRecord d;
      d.box = box_from_json(jd.at("box"));
      if (!d.box.valid()) {
        throw std::runtime_error("detections[].box is degenerate");
      }
      d.score = jd.at("score").get<double>();
      d.track = jd.value("track", -1);
      const json& joints = jd.at("joints");
      if (header.joints > 0 &&
          static_cast<int>(joints.size()) != header.joints) {
        throw std::runtime_error(
            "detections[].joints has " + std::to_string(joints.size()) +
            " entries, expected " + std::to_string(header.joints));
      }
      for (const json& jj : joints) {
        if (!jj.is_array() || jj.size() != 3) {
          throw std::runtime_error("joint must be [x,y,conf]");
        }
        d.joints.push_back(
            {jj[0].get<double>(), jj[1].get<double>(), jj[2].get<double>()});
      }
      f.detections.push_back(std::move(d));
    }
    c.frames.push_back(std::move(f));
  }
  if (c.keyframe < 1 ||
      (!c.frames.empty() &&
       c.keyframe > static_cast<int>(c.frames.size()))) {
    throw std::runtime_error("keyframe " + std::to_string(c.keyframe) +
                             " outside frame range");
  }
  for (const json& jo : j.at("objects")) {
    ObjectEntry o;
    if (jo.contains("mask")) {
      o.mask_path = jo.at("mask").get<std::string>();
    } else {
      for (const json& jp : jo.at("points")) {
        if (!jp.is_array() || jp.size() != 2) {
          throw std::runtime_error("object point must be [x,y]");
        }
        o.points.push_back(
            Keypoint::of(jp[0].get<double>(), jp[1].get<double>()));
      }
    }
    c.objects.push_back(std::move(o));
  }
  for (const json& ja : j.at("actors")) {
    ActorGt a;
    a.box = box_from_json(ja.at("box"));
    for (const json& jl : ja.at("labels")) {
      const double v = jl.get<double>();
      if (v != 0.0 && v != 1.0) {
        throw std::runtime_error("actors[].labels entries must be 0 or 1");
      }
      a.labels.push_back(v);
    }
    if (!header.classes.empty() &&
        a.labels.size() != header.classes.size()) {
      throw std::runtime_error("actors[].labels has " +
                               std::to_string(a.labels.size()) +
                               " entries for " +
                               std::to_string(header.classes.size()) +
                               " declared classes");
    }
    c.actors.push_back(std::move(a));
  }
  return c;
}

}  // namespace detail

struct ClipFile {
  DatasetHeader header;
  bool has_header = false;
  std::vector<ClipRecord> clips;
};

// Reads a .knd clip file. Unknown record types are rejected; malformed lines
// report the path, line number and offending field.
inline ClipFile load_clips(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_clips: cannot open " + path);
  ClipFile out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      detail::fail_line(path, line_no, std::string("invalid JSON: ") + e.what());
    }
    try {
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        out.header = detail::header_from_json(j);
        out.has_header = true;
      } else if (type == "clip") {
        out.clips.push_back(detail::clip_from_json(j, out.header));
      } else {
        throw std::runtime_error("unknown record type '" + type + "'");
      }
    } catch (const json::exception& e) {
      detail::fail_line(path, line_no, e.what());
    } catch (const std::runtime_error& e) {
      detail::fail_line(path, line_no, e.what());
    }
  }
  return out;
}

inline void write_clips(const std::string& path, const DatasetHeader& header,
                        const std::vector<ClipRecord>& clips) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_clips: cannot open " + path);
  out << canonical_line(to_json(header)) << "\n";
  for (const ClipRecord& c : clips) out << canonical_line(to_json(c)) << "\n";
  if (!out) throw std::runtime_error("write_clips: write failed: " + path);
}

// ---------------------------------------------------------------------------
// Token-stream records, the output of the tokenize step.

struct TokensRecord {
  std::string id;
  TokenizedScene tokens;
};

inline json to_json(const TokensRecord& r) {
  json j;
  j["id"] = r.id;
  j["instance"] = r.tokens.instance;
  json mask = json::array();
  for (std::uint8_t m : r.tokens.mask) mask.push_back(static_cast<int>(m));
  j["mask"] = mask;
  j["position"] = r.tokens.position;
  j["segment"] = r.tokens.segment;
  j["token_type"] = r.tokens.type;
  j["type"] = "tokens";
  return j;
}

inline std::vector<TokensRecord> load_tokens(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_tokens: cannot open " + path);
  std::vector<TokensRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      if (j.at("type").get<std::string>() != "tokens") continue;
      TokensRecord r;
      r.id = j.at("id").get<std::string>();
      r.tokens.position = j.at("position").get<std::vector<int>>();
      r.tokens.type = j.at("token_type").get<std::vector<int>>();
      r.tokens.segment = j.at("segment").get<std::vector<int>>();
      r.tokens.instance = j.at("instance").get<std::vector<int>>();
      for (int m : j.at("mask").get<std::vector<int>>()) {
        r.tokens.mask.push_back(static_cast<std::uint8_t>(m));
      }
      const std::size_t n = r.tokens.position.size();
      if (r.tokens.type.size() != n || r.tokens.segment.size() != n ||
          r.tokens.instance.size() != n || r.tokens.mask.size() != n) {
        throw std::runtime_error("token streams have mismatched lengths");
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      detail::fail_line(path, line_no, e.what());
    } catch (const std::runtime_error& e) {
      detail::fail_line(path, line_no, e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clip -> SceneSequence assembly: threshold joints into keypoints, link
// detections into tracklets (unless track ids are present), keep the top-N
// actors, resolve object masks through the contour pipeline, and bind
// ground-truth actor labels to tracklets by keyframe IOU.

struct AssembleOptions {
  double iou_threshold = 0.5;
  double joint_conf_threshold = 0.3;
  std::string base_dir;  // directory of the .knd file, for mask references
};

inline SceneSequence assemble_scene(const ClipRecord& clip,
                                    const DatasetHeader& header,
                                    const SceneConfig& cfg,
                                    const AssembleOptions& opt = {}) {
  SceneSequence scene;
  scene.width = clip.width;
  scene.height = clip.height;
  scene.joints = cfg.joints;

  // Frame window of cfg.frames anchored to include the keyframe.
  const int total = static_cast<int>(clip.frames.size());
  int start = 1;
  if (total > cfg.frames) {
    start = std::clamp(clip.keyframe - cfg.frames / 2, 1,
                       total - cfg.frames + 1);
  }
  const int window = std::min(cfg.frames, total);
  scene.frames = cfg.frames;
  scene.keyframe = std::clamp(clip.keyframe - start + 1, 1, cfg.frames);

  auto to_keypoints = [&](const DetRecord& d) {
    std::vector<Keypoint> kps;
    kps.reserve(d.joints.size());
    for (const JointObs& jo : d.joints) {
      if (jo.conf >= opt.joint_conf_threshold) {
        kps.push_back(Keypoint::of(jo.x, jo.y));
      } else {
        kps.push_back(Keypoint::invalid());
      }
    }
    return kps;
  };

  // Per-frame detections inside the window, re-indexed to 1..window.
  bool has_track_ids = false;
  std::vector<std::vector<Detection>> frames(window);
  std::vector<std::vector<int>> track_ids(window);
  for (int w = 0; w < window; ++w) {
    const FrameRecord& fr = clip.frames[start - 1 + w];
    for (const DetRecord& d : fr.detections) {
      Detection det;
      det.frame = w + 1;
      det.box = d.box;
      det.score = d.score;
      det.joints = to_keypoints(d);
      frames[w].push_back(std::move(det));
      track_ids[w].push_back(d.track);
      has_track_ids = has_track_ids || d.track >= 0;
    }
  }

  std::vector<Tracklet> tracks;
  if (has_track_ids) {
    std::map<int, Tracklet> by_id;
    for (int w = 0; w < window; ++w) {
      for (std::size_t i = 0; i < frames[w].size(); ++i) {
        const int id = track_ids[w][i];
        if (id < 0) continue;
        Tracklet& t = by_id[id];
        t.id = id;
        const Detection& d = frames[w][i];
        t.entries.push_back({d.frame, d.box, d.score, d.joints});
      }
    }
    for (auto& [id, t] : by_id) tracks.push_back(std::move(t));
  } else {
    tracks = link_detections_from_keyframe(frames, opt.iou_threshold,
                                           scene.keyframe - 1);
  }
  tracks = select_top_n(std::move(tracks), cfg.actors);

  for (const Tracklet& t : tracks) {
    ActorTrack at;
    at.joints.assign(static_cast<std::size_t>(cfg.frames) * cfg.joints,
                     Keypoint::invalid());
    for (const TrackletEntry& e : t.entries) {
      if (e.frame < 1 || e.frame > cfg.frames) continue;
      for (int k = 0;
           k < std::min<int>(cfg.joints, static_cast<int>(e.joints.size()));
           ++k) {
        at.joints[static_cast<std::size_t>(e.frame - 1) * cfg.joints + k] =
            e.joints[k];
      }
    }
    scene.actors.push_back(std::move(at));

    const TrackletEntry* kf = t.entry_at(scene.keyframe);
    ActorBox box;
    if (kf) box = {kf->box.x1, kf->box.y1, kf->box.x2, kf->box.y2};
    scene.actor_boxes.push_back(box);
  }

  // Bind ground-truth actor labels to tracklets by keyframe IOU.
  if (!clip.actors.empty()) {
    const std::size_t classes = header.classes.size();
    scene.actor_labels.assign(scene.actors.size(),
                              std::vector<double>(classes, 0.0));
    std::vector<char> gt_taken(clip.actors.size(), 0);
    for (std::size_t a = 0; a < scene.actors.size(); ++a) {
      const ActorBox& ab = scene.actor_boxes[a];
      const Box tb{ab.x1, ab.y1, ab.x2, ab.y2};
      if (!tb.valid()) continue;
      double best = 0.0;
      int arg = -1;
      for (std::size_t g = 0; g < clip.actors.size(); ++g) {
        if (gt_taken[g]) continue;
        const double ov = iou(tb, clip.actors[g].box);
        if (ov > best) {
          best = ov;
          arg = static_cast<int>(g);
        }
      }
      if (arg >= 0 && best >= 0.5) {
        gt_taken[arg] = 1;
        scene.actor_labels[a] = clip.actors[arg].labels;
      }
    }
  }

  // Objects: resolve masks through contour tracing + equidistant sampling.
  for (const ObjectEntry& o : clip.objects) {
    if (static_cast<int>(scene.objects.size()) >= cfg.objects) break;
    std::vector<Keypoint> pts;
    const BinaryMask* mask = nullptr;
    BinaryMask loaded;
    if (o.has_mask) {
      mask = &o.mask;
    } else if (!o.mask_path.empty()) {
      const std::filesystem::path p =
          std::filesystem::path(opt.base_dir) / o.mask_path;
      loaded = read_pgm(p.string());
      mask = &loaded;
    }
    if (mask) {
      Pixel seed{-1, -1};
      for (int y = 0; y < mask->height && seed.x < 0; ++y)
        for (int x = 0; x < mask->width; ++x)
          if (mask->at(x, y)) {
            seed = {x, y};
            break;
          }
      if (seed.x < 0) continue;  // blank mask carries no object
      const Contour contour = trace_contour(*mask, seed);
      for (const PointF& p : sample_equidistant(contour, cfg.contour_points)) {
        pts.push_back(Keypoint::of(p.x, p.y));
      }
    } else {
      pts = o.points;
      pts.resize(cfg.contour_points, Keypoint::invalid());
    }
    scene.objects.push_back(std::move(pts));
  }

  scene.video_label = clip.video_label;
  return scene;
}

}  // namespace keynet
