#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "keynet/scene.hpp"

namespace keynet {

struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double area() const { return (x2 - x1) * (y2 - y1); }
  bool valid() const { return x1 < x2 && y1 < y2; }
};

inline double iou(const Box& a, const Box& b) {
  const double ix1 = std::max(a.x1, b.x1);
  const double iy1 = std::max(a.y1, b.y1);
  const double ix2 = std::min(a.x2, b.x2);
  const double iy2 = std::min(a.y2, b.y2);
  const double iw = ix2 - ix1, ih = iy2 - iy1;
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

struct Detection {
  int frame = 0;  // 1-based timestamp within the clip
  Box box;
  double score = 0.0;
  std::vector<Keypoint> joints;
  int source = -1;  // caller-owned tag, carried through the tracker
};

struct TrackletEntry {
  int frame = 0;
  Box box;
  double score = 0.0;
  std::vector<Keypoint> joints;
  int source = -1;
};

// One actor's linked detections. At most one entry per frame; confidence is
// the mean of the member detection scores.
struct Tracklet {
  int id = 0;
  std::vector<TrackletEntry> entries;  // sorted by frame

  double confidence() const {
    if (entries.empty()) return 0.0;
    double s = 0.0;
    for (const auto& e : entries) s += e.score;
    return s / static_cast<double>(entries.size());
  }

  const TrackletEntry* entry_at(int frame) const {
    for (const auto& e : entries)
      if (e.frame == frame) return &e;
    return nullptr;
  }
};

namespace detail {

// An open track and the entry the next frame should be matched against
// (the one appended most recently in sweep order).
struct OpenTrack {
  std::size_t track;
  std::size_t entry;
};

struct Candidate {
  double overlap;
  double score;
  std::size_t open_index;
  std::size_t det;
};

// Greedy matching of the open tracks against one frame's detections:
// candidates sorted by IOU descending, ties broken by higher detection
// score then lower track id. Unmatched detections start new tracks.
inline void match_frame(std::vector<Tracklet>& tracks,
                        std::vector<OpenTrack>& open,
                        const std::vector<Detection>& dets,
                        double iou_threshold) {
  std::vector<Candidate> candidates;
  for (std::size_t oi = 0; oi < open.size(); ++oi) {
    const Box& anchor = tracks[open[oi].track].entries[open[oi].entry].box;
    for (std::size_t di = 0; di < dets.size(); ++di) {
      const double ov = iou(anchor, dets[di].box);
      if (ov >= iou_threshold) {
        candidates.push_back({ov, dets[di].score, oi, di});
      }
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [&](const Candidate& a, const Candidate& b) {
              if (a.overlap != b.overlap) return a.overlap > b.overlap;
              if (a.score != b.score) return a.score > b.score;
              return tracks[open[a.open_index].track].id <
                     tracks[open[b.open_index].track].id;
            });
  std::vector<char> open_used(open.size(), 0);
  std::vector<char> det_used(dets.size(), 0);
  std::vector<OpenTrack> next_open;
  for (const Candidate& c : candidates) {
    if (open_used[c.open_index] || det_used[c.det]) continue;
    open_used[c.open_index] = 1;
    det_used[c.det] = 1;
    const std::size_t ti = open[c.open_index].track;
    const Detection& d = dets[c.det];
    tracks[ti].entries.push_back({d.frame, d.box, d.score, d.joints, d.source});
    next_open.push_back({ti, tracks[ti].entries.size() - 1});
  }
  for (std::size_t di = 0; di < dets.size(); ++di) {
    if (det_used[di]) continue;
    Tracklet fresh;
    fresh.id = static_cast<int>(tracks.size());
    const Detection& d = dets[di];
    fresh.entries.push_back({d.frame, d.box, d.score, d.joints, d.source});
    tracks.push_back(std::move(fresh));
    next_open.push_back({tracks.size() - 1, 0});
  }
  open = std::move(next_open);
}

inline void sort_entries(std::vector<Tracklet>& tracks) {
  for (Tracklet& t : tracks) {
    std::sort(t.entries.begin(), t.entries.end(),
              [](const TrackletEntry& a, const TrackletEntry& b) {
                return a.frame < b.frame;
              });
  }
}

}  // namespace detail

// Greedy frame-to-frame IOU linking over frames in the given order. A track
// that misses a frame is closed; an unmatched detection starts a new one.
inline std::vector<Tracklet> link_detections(
    const std::vector<std::vector<Detection>>& frames, double iou_threshold) {
  std::vector<Tracklet> tracks;
  std::vector<detail::OpenTrack> open;
  for (const auto& dets : frames) {
    detail::match_frame(tracks, open, dets, iou_threshold);
  }
  detail::sort_entries(tracks);
  return tracks;
}

// Linking anchored at the keyframe: the matcher walks forward from the
// keyframe to the last frame, then backward from the keyframe to the first,
// extending the keyframe tracks both ways.
inline std::vector<Tracklet> link_detections_from_keyframe(
    const std::vector<std::vector<Detection>>& frames, double iou_threshold,
    int keyframe_index) {
  if (keyframe_index < 0 ||
      keyframe_index >= static_cast<int>(frames.size())) {
    throw std::invalid_argument("link_detections_from_keyframe: keyframe " +
                                std::to_string(keyframe_index) + " outside " +
                                std::to_string(frames.size()) + " frames");
  }
  std::vector<Tracklet> tracks;
  std::vector<detail::OpenTrack> open;
  std::vector<detail::OpenTrack> keyframe_open;
  for (int f = keyframe_index; f < static_cast<int>(frames.size()); ++f) {
    detail::match_frame(tracks, open, frames[f], iou_threshold);
    if (f == keyframe_index) keyframe_open = open;
  }
  open = std::move(keyframe_open);
  for (int f = keyframe_index - 1; f >= 0; --f) {
    detail::match_frame(tracks, open, frames[f], iou_threshold);
  }
  detail::sort_entries(tracks);
  return tracks;
}

// Top-n by confidence; ties broken by longer tracklet, then lower id.
inline std::vector<Tracklet> select_top_n(std::vector<Tracklet> tracklets,
                                          int n) {
  if (n < 1) {
    throw std::invalid_argument("select_top_n: n must be >= 1, got " +
                                std::to_string(n));
  }
  std::sort(tracklets.begin(), tracklets.end(),
            [](const Tracklet& a, const Tracklet& b) {
              const double ca = a.confidence(), cb = b.confidence();
              if (ca != cb) return ca > cb;
              if (a.entries.size() != b.entries.size())
                return a.entries.size() > b.entries.size();
              return a.id < b.id;
            });
  if (static_cast<int>(tracklets.size()) > n) tracklets.resize(n);
  return tracklets;
}

struct SubsampleResult {
  std::vector<Tracklet> tracklets;  // entries re-indexed to 1..T
  std::vector<int> kept_frames;     // original frame numbers, ascending
  int keyframe = 0;                 // re-indexed keyframe (1-based)
};

// Keeps frames at stride round(source_fps/target_fps) anchored at the
// keyframe and re-indexes the kept timestamps to 1..T.
inline SubsampleResult subsample_frames(const std::vector<Tracklet>& tracklets,
                                        double source_fps, double target_fps,
                                        int keyframe, int first_frame,
                                        int last_frame) {
  if (target_fps <= 0.0 || source_fps <= 0.0) {
    throw std::invalid_argument("subsample_frames: fps must be positive");
  }
  const int stride =
      static_cast<int>(std::llround(source_fps / target_fps));
  if (stride < 1) {
    throw std::invalid_argument(
        "subsample_frames: target fps " + std::to_string(target_fps) +
        " above source fps " + std::to_string(source_fps));
  }
  if (keyframe < first_frame || keyframe > last_frame) {
    throw std::invalid_argument("subsample_frames: keyframe " +
                                std::to_string(keyframe) + " outside [" +
                                std::to_string(first_frame) + "," +
                                std::to_string(last_frame) + "]");
  }
  SubsampleResult out;
  for (int f = first_frame; f <= last_frame; ++f) {
    if ((f - keyframe) % stride == 0) out.kept_frames.push_back(f);
  }
  std::map<int, int> remap;  // original frame -> 1-based new index
  for (std::size_t i = 0; i < out.kept_frames.size(); ++i) {
    remap[out.kept_frames[i]] = static_cast<int>(i) + 1;
  }
  out.keyframe = remap.at(keyframe);
  for (const Tracklet& t : tracklets) {
    Tracklet nt;
    nt.id = t.id;
    for (const TrackletEntry& e : t.entries) {
      const auto it = remap.find(e.frame);
      if (it == remap.end()) continue;
      TrackletEntry ne = e;
      ne.frame = it->second;
      nt.entries.push_back(ne);
    }
    out.tracklets.push_back(std::move(nt));
  }
  return out;
}

}  // namespace keynet
