#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "keynet/adam.hpp"
#include "keynet/checkpoint.hpp"
#include "keynet/data.hpp"
#include "keynet/eval.hpp"
#include "keynet/model.hpp"
#include "keynet/scene.hpp"

namespace keynet {

enum class SamplerMode { uniform, balanced };

inline std::string to_string(SamplerMode s) {
  return s == SamplerMode::uniform ? "uniform" : "balanced";
}
inline SamplerMode sampler_from_string(const std::string& s) {
  if (s == "uniform") return SamplerMode::uniform;
  if (s == "balanced") return SamplerMode::balanced;
  throw std::invalid_argument("unknown sampler mode '" + s + "'");
}

struct TrainConfig {
  double eta = 1e-4;  // peak learning rate; the value itself is a choice
  long total_iterations = 1000;
  double warmup_fraction = 0.01;
  int batch_size = 16;
  std::uint64_t seed = 1;
  AugmentPolicy augment;
  SamplerMode sampler = SamplerMode::uniform;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long checkpoint_every = 0;  // 0: only the initial and final checkpoints
  double grad_clip = 0.0;     // 0: off

  void validate() const {
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0) {
      throw std::invalid_argument("TrainConfig: warmup fraction outside (0,1)");
    }
    if (batch_size < 1) {
      throw std::invalid_argument("TrainConfig: batch size must be >= 1");
    }
    if (total_iterations < 0 || eta < 0.0) {
      throw std::invalid_argument("TrainConfig: negative iterations or eta");
    }
  }
};

// Linear warmup to eta over round(fraction * total) iterations, then linear
// decay to 0 at the final iteration.
inline double lr_at(long iter, const TrainConfig& cfg) {
  const long total = cfg.total_iterations;
  if (iter < 0 || iter > total) {
    throw std::invalid_argument("lr_at: iteration " + std::to_string(iter) +
                                " outside [0," + std::to_string(total) + "]");
  }
  const long warm = std::lround(cfg.warmup_fraction * total);
  if (warm > 0 && iter <= warm) {
    return cfg.eta * static_cast<double>(iter) / static_cast<double>(warm);
  }
  if (total == warm) return iter < total ? cfg.eta : 0.0;
  return cfg.eta * (1.0 - static_cast<double>(iter - warm) /
                              static_cast<double>(total - warm));
}

// ---------------------------------------------------------------------------
// In-memory dataset: assembled scenes plus the label views the sampler and
// losses need.

struct TrainDataset {
  DatasetHeader header;
  SceneConfig scene_cfg;
  std::vector<SceneSequence> scenes;
  std::vector<int> video_labels;  // aligned with scenes; -1 where absent
};

inline TrainDataset build_dataset(const ClipFile& file,
                                  const SceneConfig& scene_cfg,
                                  const AssembleOptions& opt = {}) {
  TrainDataset out;
  out.header = file.header;
  out.scene_cfg = scene_cfg;
  for (const ClipRecord& clip : file.clips) {
    out.scenes.push_back(assemble_scene(clip, file.header, scene_cfg, opt));
    out.video_labels.push_back(clip.video_label);
  }
  return out;
}

struct Batch {
  std::vector<TokenizedScene> tokens;
  std::vector<int> video_labels;
  // Actor mode: per scene, per configured actor slot, a multi-hot target row
  // plus a flag marking rows that carry a bound ground-truth label.
  std::vector<std::vector<std::vector<double>>> actor_targets;
  std::vector<std::vector<char>> actor_labeled;
};

inline Batch make_batch(const TrainDataset& data,
                        const std::vector<std::size_t>& indices,
                        const TrainConfig& cfg, Rng& rng, bool augmented,
                        int classes) {
  Batch batch;
  for (std::size_t idx : indices) {
    SceneSequence scene = data.scenes[idx];
    if (augmented) {
      scene = augment(scene, cfg.augment, data.header.flip_permutation, rng);
    }
    batch.tokens.push_back(tokenize_scene(scene, data.scene_cfg));
    batch.video_labels.push_back(data.video_labels[idx]);

    std::vector<std::vector<double>> targets(
        data.scene_cfg.actors, std::vector<double>(classes, 0.0));
    std::vector<char> labeled(data.scene_cfg.actors, 0);
    for (std::size_t a = 0; a < scene.actor_labels.size() &&
                            a < static_cast<std::size_t>(data.scene_cfg.actors);
         ++a) {
      double sum = 0.0;
      for (double v : scene.actor_labels[a]) sum += v;
      if (sum > 0.0) {
        targets[a] = scene.actor_labels[a];
        labeled[a] = 1;
      }
    }
    batch.actor_targets.push_back(std::move(targets));
    batch.actor_labeled.push_back(std::move(labeled));
  }
  return batch;
}

struct StepResult {
  double loss = 0.0;
  double metric = 0.0;  // batch top-1 (video) or balanced binary acc (actor)
};

// One forward + backward + Adam update over a batch; returns the pre-update
// loss. A non-finite loss aborts with diagnostics rather than poisoning the
// parameters.
inline StepResult train_step(KeyNetModel& model, const Batch& batch,
                             AdamState& opt_state, double lr,
                             DropoutState& drop, double grad_clip = 0.0) {
  model.zero_grads();

  Tensor loss;
  double metric = 0.0;
  if (model.cfg.head == HeadMode::video) {
    std::vector<Tensor> rows;
    std::vector<int> labels;
    for (std::size_t s = 0; s < batch.tokens.size(); ++s) {
      ForwardResult r = model_forward(model, batch.tokens[s], drop);
      rows.push_back(r.logits);
      labels.push_back(batch.video_labels[s]);
    }
    Tensor logits = rows.size() == 1 ? rows[0] : concat_rows(rows);
    loss = cross_entropy(logits, labels);
    int hits = 0;
    for (std::size_t s = 0; s < labels.size(); ++s) {
      hits += classify_video(logits, static_cast<int>(s)) == labels[s];
    }
    metric = static_cast<double>(hits) / static_cast<double>(labels.size());
  } else {
    std::vector<Tensor> rows;
    std::vector<double> targets;
    std::vector<char> row_mask;
    for (std::size_t s = 0; s < batch.tokens.size(); ++s) {
      ForwardResult r = model_forward(model, batch.tokens[s], drop);
      rows.push_back(r.logits);
      for (std::size_t a = 0; a < r.actor_valid.size(); ++a) {
        const bool use = r.actor_valid[a] && batch.actor_labeled[s][a];
        row_mask.push_back(use ? 1 : 0);
        for (double v : batch.actor_targets[s][a]) targets.push_back(v);
      }
    }
    Tensor logits = rows.size() == 1 ? rows[0] : concat_rows(rows);
    loss = bce_with_logits(logits, targets, row_mask);
    long correct = 0, counted = 0;
    for (int i = 0; i < logits.shape[0]; ++i) {
      if (!row_mask[i]) continue;
      for (int j = 0; j < logits.shape[1]; ++j) {
        const bool pred = logits.at(i, j) > 0.0;
        const bool want = targets[static_cast<std::size_t>(i) * logits.shape[1] + j] > 0.5;
        correct += pred == want;
        ++counted;
      }
    }
    metric = counted ? static_cast<double>(correct) / counted : 0.0;
  }

  const double loss_value = loss.scalar();
  if (!std::isfinite(loss_value)) {
    throw std::runtime_error("train_step: non-finite loss " +
                             std::to_string(loss_value) + " at optimizer step " +
                             std::to_string(opt_state.step + 1));
  }
  backward(loss);

  if (grad_clip > 0.0) {
    double norm_sq = 0.0;
    for (Tensor& p : model.parameters()) {
      if (!p.grad) continue;
      for (double g : *p.grad) norm_sq += g * g;
    }
    const double norm = std::sqrt(norm_sq);
    if (norm > grad_clip) {
      const double scale_by = grad_clip / norm;
      for (Tensor& p : model.parameters()) {
        if (!p.grad) continue;
        for (double& g : *p.grad) g *= scale_by;
      }
    }
  }
  adam_step(model.parameters(), opt_state, lr);
  return {loss_value, metric};
}

struct TrainLogRow {
  long iter = 0;
  double lr = 0.0;
  double loss = 0.0;
  double metric = 0.0;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::string metrics_path;
  std::string final_checkpoint;
};

inline std::string format_log_row(const TrainLogRow& r) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%ld,%.10g,%.10g,%.10g", r.iter, r.lr,
                r.loss, r.metric);
  return buf;
}

// Sampler -> augment -> tokenize -> step, with periodic checkpoints and a
// `iter,lr,loss,metric` CSV log. With zero total iterations only the initial
// checkpoint is written.
inline TrainResult train_loop(const TrainDataset& data, KeyNetModel& model,
                              const TrainConfig& cfg,
                              const std::string& out_dir = "") {
  cfg.validate();
  if (data.scenes.empty()) {
    throw std::invalid_argument("train_loop: empty dataset");
  }
  namespace fs = std::filesystem;
  TrainResult result;
  const bool to_disk = !out_dir.empty();
  if (to_disk) fs::create_directories(out_dir);

  auto checkpoint_path = [&](const std::string& tag) {
    return (fs::path(out_dir) / ("ckpt_" + tag + ".bin")).string();
  };
  if (to_disk) save_checkpoint(model, checkpoint_path("000000"));

  AdamState opt_state = AdamState::init(model.parameters(), cfg.beta1,
                                        cfg.beta2, cfg.epsilon);
  DropoutState drop{model.cfg.dropout, cfg.seed, 0,
                    model.cfg.dropout > 0.0};
  Rng rng(cfg.seed);

  // Pre-draw balanced sample indices so the draw stream is independent of
  // augmentation randomness.
  std::vector<std::size_t> balanced;
  if (cfg.sampler == SamplerMode::balanced) {
    std::vector<int> labels;
    for (int l : data.video_labels) {
      if (l < 0) {
        throw std::invalid_argument(
            "train_loop: balanced sampler needs video labels on every clip");
      }
      labels.push_back(l);
    }
    balanced = weighted_sample_indices(
        labels, static_cast<std::size_t>(cfg.total_iterations) * cfg.batch_size,
        rng);
  }

  const bool augmented = cfg.augment.flip || cfg.augment.crop ||
                         cfg.augment.expand;
  for (long iter = 1; iter <= cfg.total_iterations; ++iter) {
    std::vector<std::size_t> indices;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cfg.sampler == SamplerMode::balanced) {
        indices.push_back(
            balanced[static_cast<std::size_t>(iter - 1) * cfg.batch_size + b]);
      } else {
        indices.push_back(rng.uniform_index(data.scenes.size()));
      }
    }
    Batch batch =
        make_batch(data, indices, cfg, rng, augmented, model.cfg.classes);
    const double lr = lr_at(iter, cfg);
    StepResult step = train_step(model, batch, opt_state, lr, drop,
                                 cfg.grad_clip);
    result.log.push_back({iter, lr, step.loss, step.metric});
    if (to_disk && cfg.checkpoint_every > 0 &&
        iter % cfg.checkpoint_every == 0 && iter != cfg.total_iterations) {
      char tag[32];
      std::snprintf(tag, sizeof(tag), "%06ld", iter);
      save_checkpoint(model, checkpoint_path(tag));
    }
  }

  if (to_disk) {
    if (cfg.total_iterations > 0) {
      result.final_checkpoint = checkpoint_path("final");
      save_checkpoint(model, result.final_checkpoint);
    } else {
      result.final_checkpoint = checkpoint_path("000000");
    }
    result.metrics_path = (fs::path(out_dir) / "metrics.csv").string();
    std::ofstream log(result.metrics_path);
    if (!log) {
      throw std::runtime_error("train_loop: cannot write " +
                               result.metrics_path);
    }
    log << "iter,lr,loss,metric\n";
    for (const TrainLogRow& r : result.log) log << format_log_row(r) << "\n";
  }
  return result;
}

// ---------------------------------------------------------------------------
// Whole-dataset evaluation.

inline double evaluate_top1(const KeyNetModel& model,
                            const TrainDataset& data) {
  DropoutState drop;  // inference: dropout off
  std::vector<std::vector<double>> scores;
  std::vector<int> labels;
  for (std::size_t i = 0; i < data.scenes.size(); ++i) {
    if (data.video_labels[i] < 0) continue;
    const TokenizedScene tok = tokenize_scene(data.scenes[i], data.scene_cfg);
    ForwardResult r = model_forward(model, tok, drop);
    std::vector<double> row(model.cfg.classes);
    for (int j = 0; j < model.cfg.classes; ++j) row[j] = r.logits.at(0, j);
    scores.push_back(std::move(row));
    labels.push_back(data.video_labels[i]);
  }
  return top1_accuracy(scores, labels);
}

// Actor-level frame-AP at IOU 0.5: every valid tracklet contributes its
// keyframe box with per-class sigmoid scores; ground truth comes from the
// clip records.
inline MapReport evaluate_actor_map(const KeyNetModel& model,
                                    const TrainDataset& data,
                                    const std::vector<ClipRecord>& clips) {
  DropoutState drop;
  const int classes = model.cfg.classes;
  std::vector<std::vector<ScoredBox>> preds(classes);
  std::vector<std::vector<GroundTruthBox>> gts(classes);
  for (std::size_t i = 0; i < data.scenes.size(); ++i) {
    const SceneSequence& scene = data.scenes[i];
    const TokenizedScene tok = tokenize_scene(scene, data.scene_cfg);
    ForwardResult r = model_forward(model, tok, drop);
    for (std::size_t a = 0; a < r.actor_valid.size(); ++a) {
      if (!r.actor_valid[a] || a >= scene.actor_boxes.size()) continue;
      const ActorBox& b = scene.actor_boxes[a];
      const Box box{b.x1, b.y1, b.x2, b.y2};
      if (!box.valid()) continue;
      const auto s = actor_scores(r.logits, static_cast<int>(a));
      for (int c = 0; c < classes; ++c) {
        preds[c].push_back({static_cast<int>(i), box, s[c]});
      }
    }
    for (const ActorGt& gt : clips[i].actors) {
      for (int c = 0; c < classes && c < static_cast<int>(gt.labels.size());
           ++c) {
        if (gt.labels[c] > 0.5) {
          gts[c].push_back({static_cast<int>(i), gt.box});
        }
      }
    }
  }
  return evaluate_map(preds, gts, 0.5);
}

// ---------------------------------------------------------------------------
// Flat key=value run configuration (model + schedule in one file).

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

inline RunConfig parse_run_config_text(const std::string& text,
                                       const std::string& origin = "config") {
  RunConfig rc;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back())))
      line.pop_back();
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                               ": expected key=value, got '" + line + "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "eta") rc.train.eta = std::stod(value);
      else if (key == "iterations") rc.train.total_iterations = std::stol(value);
      else if (key == "warmup_fraction") rc.train.warmup_fraction = std::stod(value);
      else if (key == "batch_size") rc.train.batch_size = std::stoi(value);
      else if (key == "seed") rc.train.seed = std::stoull(value);
      else if (key == "flip") rc.train.augment.flip = std::stoi(value) != 0;
      else if (key == "crop") rc.train.augment.crop = std::stoi(value) != 0;
      else if (key == "expand") rc.train.augment.expand = std::stoi(value) != 0;
      else if (key == "sampler") rc.train.sampler = sampler_from_string(value);
      else if (key == "beta1") rc.train.beta1 = std::stod(value);
      else if (key == "beta2") rc.train.beta2 = std::stod(value);
      else if (key == "epsilon") rc.train.epsilon = std::stod(value);
      else if (key == "checkpoint_every") rc.train.checkpoint_every = std::stol(value);
      else if (key == "grad_clip") rc.train.grad_clip = std::stod(value);
      else if (key == "d_model") rc.model.d_model = std::stoi(value);
      else if (key == "heads") rc.model.heads = std::stoi(value);
      else if (key == "layers") rc.model.layers = std::stoi(value);
      else if (key == "intermediate") rc.model.intermediate = std::stoi(value);
      else if (key == "dropout") rc.model.dropout = std::stod(value);
      else if (key == "classes") rc.model.classes = std::stoi(value);
      else if (key == "head") rc.model.head = head_mode_from_string(value);
      else if (key == "kind") rc.model.kind = model_kind_from_string(value);
      else if (key == "grid") {
        const auto x = value.find('x');
        if (x == std::string::npos) throw std::runtime_error("expected WxH");
        rc.model.scene.grid_w = std::stoi(value.substr(0, x));
        rc.model.scene.grid_h = std::stoi(value.substr(x + 1));
      }
      else if (key == "frames") rc.model.scene.frames = std::stoi(value);
      else if (key == "actors") rc.model.scene.actors = std::stoi(value);
      else if (key == "objects") rc.model.scene.objects = std::stoi(value);
      else if (key == "joints") rc.model.scene.joints = std::stoi(value);
      else if (key == "contour_points") rc.model.scene.contour_points = std::stoi(value);
      else throw std::runtime_error("unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw std::runtime_error(origin + ":" + std::to_string(line_no) +
                               ": bad value for '" + key + "'");
    } catch (const std::runtime_error& e) {
      throw std::runtime_error(origin + ":" + std::to_string(line_no) + ": " +
                               e.what());
    }
  }
  return rc;
}

inline RunConfig parse_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("parse_run_config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config_text(buf.str(), path);
}

}  // namespace keynet
