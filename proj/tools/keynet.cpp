// Command-line front end for the keypoint action-recognition pipeline:
// contour extraction, IOU tracking, tokenization, synthetic data, training,
// evaluation, gradient verification and token visualization.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "keynet/checkpoint.hpp"
#include "keynet/data.hpp"
#include "keynet/eval.hpp"
#include "keynet/geometry.hpp"
#include "keynet/gradcheck.hpp"
#include "keynet/model.hpp"
#include "keynet/synth.hpp"
#include "keynet/tracking.hpp"
#include "keynet/train.hpp"
#include "keynet/viz.hpp"

namespace fs = std::filesystem;
using namespace keynet;

namespace {

struct GridArg {
  int w = 32;
  int h = 24;
};

GridArg parse_grid(const std::string& value) {
  const auto x = value.find('x');
  if (x == std::string::npos) {
    throw std::runtime_error("grid must be WxH, got '" + value + "'");
  }
  GridArg g;
  g.w = std::stoi(value.substr(0, x));
  g.h = std::stoi(value.substr(x + 1));
  if (g.w < 1 || g.h < 1) throw std::runtime_error("grid extents must be >= 1");
  return g;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

int run_contour(const std::string& mask_path, int k, const std::string& out,
                int seed_x, int seed_y) {
  const BinaryMask mask = read_pgm(mask_path);
  Pixel seed{seed_x, seed_y};
  if (seed.x < 0 || seed.y < 0) {
    seed = {-1, -1};
    for (int y = 0; y < mask.height && seed.x < 0; ++y)
      for (int x = 0; x < mask.width; ++x)
        if (mask.at(x, y)) {
          seed = {x, y};
          break;
        }
    if (seed.x < 0) throw std::runtime_error("mask has no foreground pixel");
  }
  const Contour contour = trace_contour(mask, seed);
  const auto points = sample_equidistant(contour, k);
  json j;
  j["k"] = k;
  json pts = json::array();
  for (const PointF& p : points) pts.push_back(json::array({p.x, p.y}));
  j["points"] = pts;
  j["source"] = mask_path;
  j["type"] = "object_keypoints";
  write_text(out, canonical_line(j) + "\n");
  std::printf("contour: %d keypoints from %s -> %s\n", k, mask_path.c_str(),
              out.c_str());
  return 0;
}

int run_track(const std::string& in, double iou_threshold, int top_n,
              double target_fps, const std::string& out) {
  ClipFile file = load_clips(in);
  // Mask references are relative to the file that holds them; rebase them
  // onto the output file's directory.
  const fs::path in_dir = fs::path(in).parent_path();
  const fs::path out_dir = fs::path(out).parent_path();
  for (ClipRecord& clip : file.clips) {
    for (ObjectEntry& obj : clip.objects) {
      if (obj.mask_path.empty()) continue;
      const fs::path absolute = in_dir / obj.mask_path;
      obj.mask_path = fs::relative(absolute, out_dir.empty() ? "." : out_dir)
                          .generic_string();
    }
  }
  std::vector<ClipRecord> tracked;
  for (const ClipRecord& clip : file.clips) {
    // Tracker input: one detection list per frame, tagged with the index of
    // the source record so matched entries can be mapped back.
    std::vector<std::vector<Detection>> frames(clip.frames.size());
    for (std::size_t f = 0; f < clip.frames.size(); ++f) {
      for (std::size_t d = 0; d < clip.frames[f].detections.size(); ++d) {
        const DetRecord& dr = clip.frames[f].detections[d];
        Detection det;
        det.frame = static_cast<int>(f) + 1;
        det.box = dr.box;
        det.score = dr.score;
        det.source = static_cast<int>(d);
        frames[f].push_back(std::move(det));
      }
    }
    auto tracks = link_detections_from_keyframe(frames, iou_threshold,
                                                clip.keyframe - 1);
    tracks = select_top_n(std::move(tracks), top_n);

    std::vector<int> kept_frames;
    int new_keyframe = clip.keyframe;
    if (target_fps > 0.0 && target_fps < clip.fps) {
      auto sub = subsample_frames(tracks, clip.fps, target_fps, clip.keyframe,
                                  1, static_cast<int>(clip.frames.size()));
      tracks = std::move(sub.tracklets);
      kept_frames = sub.kept_frames;
      new_keyframe = sub.keyframe;
    } else {
      for (std::size_t f = 1; f <= clip.frames.size(); ++f)
        kept_frames.push_back(static_cast<int>(f));
    }

    ClipRecord out_clip = clip;
    out_clip.fps = target_fps > 0.0 && target_fps < clip.fps ? target_fps
                                                             : clip.fps;
    out_clip.keyframe = new_keyframe;
    out_clip.frames.clear();
    for (std::size_t w = 0; w < kept_frames.size(); ++w) {
      FrameRecord fr;
      fr.index = static_cast<int>(w) + 1;
      out_clip.frames.push_back(fr);
    }
    int next_id = 0;
    for (const Tracklet& t : tracks) {
      for (const TrackletEntry& e : t.entries) {
        const int orig_frame = kept_frames[e.frame - 1];
        const DetRecord& src =
            clip.frames[orig_frame - 1].detections[e.source];
        DetRecord dr = src;
        dr.track = next_id;
        out_clip.frames[e.frame - 1].detections.push_back(std::move(dr));
      }
      ++next_id;
    }
    tracked.push_back(std::move(out_clip));
  }
  write_clips(out, file.header, tracked);
  std::printf("track: %zu clips -> %s\n", tracked.size(), out.c_str());
  return 0;
}

int run_tokenize(const std::string& in, const GridArg& grid, int frames,
                 int actors, int objects, const std::string& out) {
  ClipFile file = load_clips(in);
  SceneConfig cfg;
  cfg.grid_w = grid.w;
  cfg.grid_h = grid.h;
  cfg.frames = frames;
  cfg.actors = actors;
  cfg.objects = objects;
  cfg.joints = file.header.joints > 0 ? file.header.joints : 13;
  cfg.contour_points = file.header.contour_points;
  AssembleOptions opt;
  opt.base_dir = fs::path(in).parent_path().string();
  std::ofstream os(out);
  if (!os) throw std::runtime_error("cannot open " + out + " for writing");
  for (const ClipRecord& clip : file.clips) {
    TokensRecord rec;
    rec.id = clip.id;
    rec.tokens = tokenize_scene(assemble_scene(clip, file.header, cfg, opt),
                                cfg);
    os << canonical_line(to_json(rec)) << "\n";
  }
  if (!os) throw std::runtime_error("write failed: " + out);
  std::printf("tokenize: %zu clips -> %s\n", file.clips.size(), out.c_str());
  return 0;
}

int run_synth(const std::string& spec_path, const std::string& out_dir,
              double val_fraction) {
  const SynthSpec spec = load_synth_spec(spec_path);
  SynthResult synth = generate_synthetic(spec);
  fs::create_directories(fs::path(out_dir) / "masks");

  // Swap in-memory masks for PGM references so the contour pipeline runs on
  // real files downstream.
  for (ClipRecord& clip : synth.clips) {
    for (std::size_t j = 0; j < clip.objects.size(); ++j) {
      ObjectEntry& obj = clip.objects[j];
      if (!obj.has_mask) continue;
      const std::string rel =
          "masks/" + clip.id + "_obj" + std::to_string(j) + ".pgm";
      write_pgm(obj.mask, (fs::path(out_dir) / rel).string());
      obj.mask_path = rel;
      obj.points.clear();
      obj.has_mask = false;
    }
  }
  SplitResult split = split_dataset(synth.clips, val_fraction);
  write_clips((fs::path(out_dir) / "train.knd").string(), synth.header,
              split.train);
  write_clips((fs::path(out_dir) / "val.knd").string(), synth.header,
              split.val);
  std::printf("synth: %zu train / %zu val clips -> %s\n", split.train.size(),
              split.val.size(), out_dir.c_str());
  return 0;
}

TrainDataset dataset_from_file(const std::string& path,
                               const SceneConfig& cfg) {
  ClipFile file = load_clips(path);
  AssembleOptions opt;
  opt.base_dir = fs::path(path).parent_path().string();
  return build_dataset(file, cfg, opt);
}

int run_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_dir) {
  RunConfig rc = parse_run_config(config_path);
  const std::string train_path = (fs::path(data_dir) / "train.knd").string();
  ClipFile train_file = load_clips(train_path);
  if (!train_file.has_header) {
    throw std::runtime_error(train_path + " has no header record");
  }
  rc.model.scene.joints = train_file.header.joints;
  rc.model.scene.contour_points = train_file.header.contour_points;
  rc.model.classes = static_cast<int>(train_file.header.classes.size());

  AssembleOptions opt;
  opt.base_dir = data_dir;
  TrainDataset data = build_dataset(train_file, rc.model.scene, opt);
  KeyNetModel model = KeyNetModel::build(rc.model, rc.train.seed);
  std::printf("train: %zu clips, %ld parameters, %ld iterations\n",
              data.scenes.size(), model.parameter_count(),
              rc.train.total_iterations);
  TrainResult result = train_loop(data, model, rc.train, out_dir);
  if (!result.log.empty()) {
    std::printf("train: final loss %.6f, metrics at %s\n",
                result.log.back().loss, result.metrics_path.c_str());
  }

  const std::string val_path = (fs::path(data_dir) / "val.knd").string();
  if (fs::exists(val_path) && model.cfg.head == HeadMode::video) {
    TrainDataset val = dataset_from_file(val_path, rc.model.scene);
    std::printf("train: val top1 %.4f\n", evaluate_top1(model, val));
  }
  std::printf("train: checkpoint %s\n", result.final_checkpoint.c_str());
  return 0;
}

int run_eval(const std::string& data_path, const std::string& ckpt,
             const std::string& metric) {
  KeyNetModel model = load_checkpoint(ckpt);
  std::string knd = data_path;
  if (fs::is_directory(knd)) knd = (fs::path(knd) / "val.knd").string();
  ClipFile file = load_clips(knd);
  AssembleOptions opt;
  opt.base_dir = fs::path(knd).parent_path().string();
  TrainDataset data = build_dataset(file, model.cfg.scene, opt);

  if (metric == "top1") {
    std::printf("top1,%.6f\n", evaluate_top1(model, data));
  } else if (metric == "framemap") {
    MapReport report = evaluate_actor_map(model, data, file.clips);
    for (const auto& [cls, ap] : report.per_class) {
      const std::string name =
          cls < static_cast<int>(file.header.classes.size())
              ? file.header.classes[cls]
              : std::to_string(cls);
      std::printf("%s,%.6f\n", name.c_str(), ap);
    }
    std::printf("mAP,%.6f\n", report.map);
  } else {
    throw std::runtime_error("unknown metric '" + metric +
                             "' (expected top1 or framemap)");
  }
  return 0;
}

int run_gradcheck(const std::string& config_path, double tolerance) {
  ModelConfig mc;
  if (!config_path.empty()) {
    mc = parse_run_config(config_path).model;
  } else {
    mc.scene = SceneConfig{4, 3, 2, 2, 1, 3, 2};
    mc.d_model = 8;
    mc.heads = 2;
    mc.layers = 2;
    mc.intermediate = 16;
    mc.classes = 3;
  }
  mc.dropout = 0.0;  // finite differences need a deterministic forward

  // A small deterministic scene exercising actors, padding and objects.
  Rng rng(17);
  SceneSequence scene;
  scene.width = 64;
  scene.height = 48;
  scene.frames = mc.scene.frames;
  scene.joints = mc.scene.joints;
  scene.keyframe = (mc.scene.frames + 1) / 2;
  const int present_actors = std::max(1, mc.scene.actors - 1);
  for (int n = 0; n < present_actors; ++n) {
    ActorTrack track;
    for (int i = 0; i < mc.scene.frames * mc.scene.joints; ++i) {
      track.joints.push_back(Keypoint::of(rng.uniform(0.0, scene.width),
                                          rng.uniform(0.0, scene.height)));
    }
    scene.actors.push_back(std::move(track));
  }
  for (int j = 0; j < std::min(1, mc.scene.objects); ++j) {
    std::vector<Keypoint> pts;
    for (int i = 0; i < mc.scene.contour_points; ++i) {
      pts.push_back(Keypoint::of(rng.uniform(0.0, scene.width),
                                 rng.uniform(0.0, scene.height)));
    }
    scene.objects.push_back(std::move(pts));
  }

  int failures = 0;
  for (ModelKind kind : {ModelKind::flat, ModelKind::hierarchical}) {
    ModelConfig cfg = mc;
    cfg.kind = kind;
    cfg.head = kind == ModelKind::flat ? HeadMode::video : HeadMode::actor;
    KeyNetModel model = KeyNetModel::build(cfg, 23);
    const TokenizedScene tokens = tokenize_scene(scene, cfg.scene);
    DropoutState drop;
    auto loss_fn = [&]() -> Tensor {
      ForwardResult r = model_forward(model, tokens, drop);
      if (cfg.head == HeadMode::video) {
        return cross_entropy(r.logits, {1});
      }
      std::vector<double> targets(
          static_cast<std::size_t>(r.logits.shape[0]) * cfg.classes, 0.0);
      for (int a = 0; a < r.logits.shape[0]; ++a) {
        targets[static_cast<std::size_t>(a) * cfg.classes + a % cfg.classes] =
            1.0;
      }
      return bce_with_logits(r.logits, targets, r.actor_valid);
    };
    const GradCheckReport report =
        check_gradients(model.parameters(), model.parameter_names(), loss_fn);
    const bool ok = report.pass(tolerance);
    std::printf(
        "gradcheck %s: %zu partials, max rel err %.3e (worst %s[%zu]) %s\n",
        to_string(kind).c_str(), report.checked, report.max_rel_err,
        report.worst_param.c_str(), report.worst_index, ok ? "PASS" : "FAIL");
    failures += !ok;
  }
  return failures == 0 ? 0 : 1;
}

int run_viz(const std::string& in, const std::string& out, int index) {
  const auto records = load_tokens(in);
  if (records.empty()) throw std::runtime_error(in + " has no token records");
  if (index < 0 || index >= static_cast<int>(records.size())) {
    throw std::runtime_error("record index " + std::to_string(index) +
                             " outside 0.." +
                             std::to_string(records.size() - 1));
  }
  write_text(out, render_tokens_svg(records[index].tokens, records[index].id));
  std::printf("viz-tokens: %s[%d] -> %s\n", in.c_str(), index, out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"keypoint action recognition pipeline"};
  app.require_subcommand(1);

  auto* contour = app.add_subcommand(
      "contour", "extract object keypoints from a mask via contour tracing");
  std::string mask_path, contour_out;
  int contour_k = 8, seed_x = -1, seed_y = -1;
  contour->add_option("--mask", mask_path, "input PGM mask")->required();
  contour->add_option("--k", contour_k, "number of keypoints");
  contour->add_option("--out", contour_out, "output .knd file")->required();
  contour->add_option("--seed-x", seed_x,
                      "seed pixel x (default: first foreground)");
  contour->add_option("--seed-y", seed_y, "seed pixel y");

  auto* track = app.add_subcommand(
      "track", "link detections into tracklets and keep the top-N actors");
  std::string track_in, track_out;
  double track_iou = 0.5, track_fps = 0.0;
  int track_n = 5;
  track->add_option("--in", track_in, "input clips .knd")->required();
  track->add_option("--iou", track_iou, "matching IOU threshold");
  track->add_option("--n", track_n, "actors to keep");
  track->add_option("--fps", track_fps, "target frame rate (subsample)");
  track->add_option("--out", track_out, "output .knd")->required();

  auto* tokenize = app.add_subcommand(
      "tokenize", "convert tracked clips into the four token streams");
  std::string tok_in, tok_out, tok_grid = "32x24";
  int tok_frames = 10, tok_n = 5, tok_m = 3;
  tokenize->add_option("--in", tok_in, "input clips .knd")->required();
  tokenize->add_option("--grid", tok_grid, "position grid WxH");
  tokenize->add_option("--frames", tok_frames, "frames per scene (T)");
  tokenize->add_option("--n", tok_n, "actor slots (N)");
  tokenize->add_option("--m", tok_m, "object slots (M)");
  tokenize->add_option("--out", tok_out, "output tokens .knd")->required();

  auto* synth = app.add_subcommand(
      "synth", "generate a synthetic skeleton-action dataset");
  std::string synth_spec, synth_out;
  double synth_val = 0.2;
  synth->add_option("--spec", synth_spec, "synth spec .knd")->required();
  synth->add_option("--out", synth_out, "output dataset directory")
      ->required();
  synth->add_option("--val-fraction", synth_val, "validation share");

  auto* train = app.add_subcommand("train", "train a model on a dataset");
  std::string train_data, train_cfg, train_out;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--config", train_cfg, "key=value run config")->required();
  train->add_option("--out", train_out, "checkpoint/metrics directory")
      ->required();

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_data, eval_ckpt, eval_metric = "top1";
  eval->add_option("--data", eval_data, "dataset directory or .knd file")
      ->required();
  eval->add_option("--ckpt", eval_ckpt, "model checkpoint")->required();
  eval->add_option("--metric", eval_metric, "top1 | framemap");

  auto* gradcheck = app.add_subcommand(
      "gradcheck", "verify analytic gradients against finite differences");
  std::string grad_cfg;
  double grad_tol = 1e-4;
  gradcheck->add_option("--config", grad_cfg, "run config (model section)");
  gradcheck->add_option("--tolerance", grad_tol, "max relative error");

  auto* viz = app.add_subcommand("viz-tokens",
                                 "render token streams as an SVG scatter");
  std::string viz_in, viz_out;
  int viz_index = 0;
  viz->add_option("--in", viz_in, "tokens .knd")->required();
  viz->add_option("--out", viz_out, "output .svg")->required();
  viz->add_option("--index", viz_index, "record index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 2;
  }

  try {
    if (contour->parsed())
      return run_contour(mask_path, contour_k, contour_out, seed_x, seed_y);
    if (track->parsed())
      return run_track(track_in, track_iou, track_n, track_fps, track_out);
    if (tokenize->parsed())
      return run_tokenize(tok_in, parse_grid(tok_grid), tok_frames, tok_n,
                          tok_m, tok_out);
    if (synth->parsed()) return run_synth(synth_spec, synth_out, synth_val);
    if (train->parsed()) return run_train(train_data, train_cfg, train_out);
    if (eval->parsed()) return run_eval(eval_data, eval_ckpt, eval_metric);
    if (gradcheck->parsed()) return run_gradcheck(grad_cfg, grad_tol);
    if (viz->parsed()) return run_viz(viz_in, viz_out, viz_index);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
