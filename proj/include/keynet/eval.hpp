#pragma once

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "keynet/tracking.hpp"

namespace keynet {

// Fraction of rows whose argmax matches the label.
inline double top1_accuracy(const std::vector<std::vector<double>>& scores,
                            const std::vector<int>& labels) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw std::invalid_argument("top1_accuracy: " +
                                std::to_string(scores.size()) +
                                " score rows for " +
                                std::to_string(labels.size()) + " labels");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].empty()) {
      throw std::invalid_argument("top1_accuracy: empty score row " +
                                  std::to_string(i));
    }
    std::size_t best = 0;
    for (std::size_t j = 1; j < scores[i].size(); ++j) {
      if (scores[i][j] > scores[i][best]) best = j;
    }
    hits += static_cast<int>(best) == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(scores.size());
}

// One scored box for one class, tied to the keyframe image it was predicted
// on (`group` distinguishes clips/frames so boxes never match across them).
struct ScoredBox {
  int group = 0;
  Box box;
  double score = 0.0;
};

struct GroundTruthBox {
  int group = 0;
  Box box;
};

// Detection-style average precision for one class at an IOU threshold.
// Predictions are ranked by score; each greedily claims the highest-IOU
// unmatched ground truth in its group (ties on IOU broken by ground-truth
// index order). Area under the all-point interpolated precision-recall
// curve.
inline double frame_ap(std::vector<ScoredBox> predictions,
                       const std::vector<GroundTruthBox>& ground_truth,
                       double iou_threshold = 0.5) {
  if (ground_truth.empty()) {
    throw std::invalid_argument("frame_ap: no ground truth for class");
  }
  std::stable_sort(predictions.begin(), predictions.end(),
                   [](const ScoredBox& a, const ScoredBox& b) {
                     return a.score > b.score;
                   });
  std::vector<char> taken(ground_truth.size(), 0);
  std::vector<char> is_tp(predictions.size(), 0);
  for (std::size_t p = 0; p < predictions.size(); ++p) {
    double best_iou = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      if (taken[g] || ground_truth[g].group != predictions[p].group) continue;
      const double ov = iou(predictions[p].box, ground_truth[g].box);
      if (ov > best_iou) {  // ties keep the earlier ground-truth index
        best_iou = ov;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best_iou >= iou_threshold) {
      taken[best_gt] = 1;
      is_tp[p] = 1;
    }
  }
  // Precision-recall points down the ranked list, then the interpolated
  // envelope integrated over recall.
  const double n_gt = static_cast<double>(ground_truth.size());
  std::vector<double> recalls, precisions;
  int tp = 0;
  for (std::size_t p = 0; p < predictions.size(); ++p) {
    tp += is_tp[p];
    recalls.push_back(tp / n_gt);
    precisions.push_back(static_cast<double>(tp) / static_cast<double>(p + 1));
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t p = 0; p < predictions.size(); ++p) {
    double envelope = 0.0;
    for (std::size_t q = p; q < predictions.size(); ++q) {
      envelope = std::max(envelope, precisions[q]);
    }
    ap += (recalls[p] - prev_recall) * envelope;
    prev_recall = recalls[p];
  }
  return ap;
}

// Unweighted mean over the supplied per-class APs (classes without ground
// truth are skipped by the caller and never enter the mean).
inline double mean_ap(const std::vector<double>& per_class_ap) {
  if (per_class_ap.empty()) {
    throw std::invalid_argument("mean_ap: no evaluated classes");
  }
  double s = 0.0;
  for (double ap : per_class_ap) s += ap;
  return s / static_cast<double>(per_class_ap.size());
}

// Evaluates every class that has ground truth; classes without any are
// skipped. Returns (class id, ap) pairs plus the mean.
struct MapReport {
  std::vector<std::pair<int, double>> per_class;
  double map = 0.0;
};

inline MapReport evaluate_map(
    const std::vector<std::vector<ScoredBox>>& predictions_per_class,
    const std::vector<std::vector<GroundTruthBox>>& gt_per_class,
    double iou_threshold = 0.5) {
  if (predictions_per_class.size() != gt_per_class.size()) {
    throw std::invalid_argument("evaluate_map: class count mismatch");
  }
  MapReport report;
  std::vector<double> aps;
  for (std::size_t c = 0; c < gt_per_class.size(); ++c) {
    if (gt_per_class[c].empty()) continue;
    const double ap =
        frame_ap(predictions_per_class[c], gt_per_class[c], iou_threshold);
    report.per_class.emplace_back(static_cast<int>(c), ap);
    aps.push_back(ap);
  }
  report.map = mean_ap(aps);
  return report;
}

}  // namespace keynet
