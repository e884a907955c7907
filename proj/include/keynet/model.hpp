#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "keynet/adam.hpp"
#include "keynet/ops.hpp"
#include "keynet/rng.hpp"
#include "keynet/scene.hpp"
#include "keynet/tensor.hpp"

namespace keynet {

enum class HeadMode { video, actor };
enum class ModelKind { flat, hierarchical };

inline std::string to_string(HeadMode m) {
  return m == HeadMode::video ? "video" : "actor";
}
inline std::string to_string(ModelKind k) {
  return k == ModelKind::flat ? "flat" : "hierarchical";
}
inline HeadMode head_mode_from_string(const std::string& s) {
  if (s == "video") return HeadMode::video;
  if (s == "actor") return HeadMode::actor;
  throw std::invalid_argument("unknown head mode '" + s + "'");
}
inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "flat") return ModelKind::flat;
  if (s == "hierarchical") return ModelKind::hierarchical;
  throw std::invalid_argument("unknown model kind '" + s + "'");
}

struct ModelConfig {
  SceneConfig scene;
  int d_model = 128;
  int heads = 4;
  int layers = 4;  // per encoder stage
  int intermediate = 128;
  double dropout = 0.1;
  int classes = 20;
  HeadMode head = HeadMode::video;
  ModelKind kind = ModelKind::hierarchical;

  void validate() const {
    scene.validate();
    if (d_model < 1 || heads < 1 || layers < 1 || intermediate < 1 ||
        classes < 1) {
      throw std::invalid_argument("ModelConfig: non-positive field");
    }
    if (d_model % heads != 0) {
      throw std::invalid_argument("ModelConfig: d_model " +
                                  std::to_string(d_model) +
                                  " not divisible by heads " +
                                  std::to_string(heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw std::invalid_argument("ModelConfig: dropout outside [0,1)");
    }
  }
};

// Exact trainable scalar count for a config: the four embedding tables, the
// per-stage classification vectors, the encoder blocks and the output head.
inline long count_parameters(const ModelConfig& cfg) {
  const long d = cfg.d_model;
  const long i = cfg.intermediate;
  const long vocab = cfg.scene.position_vocab() + cfg.scene.type_vocab() +
                     cfg.scene.segment_vocab() + cfg.scene.instance_vocab();
  const long per_layer = 4 * (d * d + d)   // q,k,v,o projections + biases
                         + 2 * 2 * d       // two layer norms
                         + d * i + i       // feed-forward in
                         + i * d + d;      // feed-forward out
  const long stages = cfg.kind == ModelKind::hierarchical ? 2 : 1;
  const long cls_vectors = stages * d;
  const long head = d * cfg.classes + cfg.classes;
  return vocab * d + cls_vectors + stages * cfg.layers * per_layer + head;
}

// Scaled dot-product attention with key masking: softmax(Q K^T / sqrt(d))
// over the valid keys, applied to V. Rows with no valid key come out zero.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const std::vector<char>& key_valid) {
  detail::check_2d(q, "attention");
  detail::check_2d(k, "attention");
  detail::check_2d(v, "attention");
  if (q.shape[1] != k.shape[1] || k.shape[0] != v.shape[0]) {
    throw std::invalid_argument("attention: shapes " + shape_str(q.shape) +
                                ", " + shape_str(k.shape) + ", " +
                                shape_str(v.shape) + " do not agree");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.shape[1]));
  Tensor scores = scale(matmul(q, transpose(k)), inv_sqrt_d);
  Tensor weights = masked_softmax_rows(scores, key_valid);
  return matmul(weights, v);
}

struct LayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gain, ln1_bias;
  Tensor w1, b1, w2, b2;
  Tensor ln2_gain, ln2_bias;
};

// Deterministic dropout driver; the counter advances once per application so
// every site in a forward pass sees a distinct mask.
struct DropoutState {
  double rate = 0.0;
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
  bool enabled = false;

  Tensor apply(const Tensor& x) {
    if (!enabled || rate <= 0.0) return x;
    return dropout(x, rate, seed, counter++);
  }
};

// The model: four embedding tables, per-stage classification vectors, one or
// two encoder stacks and a linear head. The registry keeps (name, tensor)
// pairs in a fixed order for the optimizer, checkpoints and gradient checks.
class KeyNetModel {
 public:
  ModelConfig cfg;
  Tensor position_table, type_table, segment_table, instance_table;
  Tensor cls1, cls2;  // cls2 present only for the hierarchical model
  std::vector<LayerParams> encoder1, encoder2;
  Tensor head_w, head_b;

  static KeyNetModel build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    KeyNetModel m;
    m.cfg = cfg;
    Rng rng(seed);
    const int d = cfg.d_model;

    m.position_table = init_table(cfg.scene.position_vocab(), d, rng);
    m.type_table = init_table(cfg.scene.type_vocab(), d, rng);
    m.segment_table = init_table(cfg.scene.segment_vocab(), d, rng);
    m.instance_table = init_table(cfg.scene.instance_vocab(), d, rng);
    m.cls1 = init_dense(1, d, rng);
    if (cfg.kind == ModelKind::hierarchical) m.cls2 = init_dense(1, d, rng);

    const int stages = cfg.kind == ModelKind::hierarchical ? 2 : 1;
    for (int s = 0; s < stages; ++s) {
      std::vector<LayerParams>& enc = s == 0 ? m.encoder1 : m.encoder2;
      for (int l = 0; l < cfg.layers; ++l) {
        LayerParams p;
        p.wq = init_dense(d, d, rng);
        p.bq = Tensor::zeros({d}, true);
        p.wk = init_dense(d, d, rng);
        p.bk = Tensor::zeros({d}, true);
        p.wv = init_dense(d, d, rng);
        p.bv = Tensor::zeros({d}, true);
        p.wo = init_dense(d, d, rng);
        p.bo = Tensor::zeros({d}, true);
        p.ln1_gain = Tensor::full({d}, 1.0, true);
        p.ln1_bias = Tensor::zeros({d}, true);
        p.w1 = init_dense(d, cfg.intermediate, rng);
        p.b1 = Tensor::zeros({cfg.intermediate}, true);
        p.w2 = init_dense(cfg.intermediate, d, rng);
        p.b2 = Tensor::zeros({d}, true);
        p.ln2_gain = Tensor::full({d}, 1.0, true);
        p.ln2_bias = Tensor::zeros({d}, true);
        enc.push_back(std::move(p));
      }
    }
    m.head_w = init_dense(d, cfg.classes, rng);
    m.head_b = Tensor::zeros({cfg.classes}, true);
    m.build_registry();
    return m;
  }

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }

  void zero_grads() {
    for (Tensor& p : params_) p.zero_grad();
  }

  long parameter_count() const {
    long n = 0;
    for (const Tensor& p : params_) n += static_cast<long>(p.numel());
    return n;
  }

  // Rebuild the registry after tensors were replaced wholesale (checkpoint
  // load constructs tensors first, then calls this).
  void build_registry() {
    params_.clear();
    names_.clear();
    auto reg = [this](const std::string& name, Tensor& t) {
      names_.push_back(name);
      params_.push_back(t);
    };
    reg("position_table", position_table);
    reg("type_table", type_table);
    reg("segment_table", segment_table);
    reg("instance_table", instance_table);
    reg("cls1", cls1);
    if (cfg.kind == ModelKind::hierarchical) reg("cls2", cls2);
    const int stages = cfg.kind == ModelKind::hierarchical ? 2 : 1;
    for (int s = 0; s < stages; ++s) {
      std::vector<LayerParams>& enc = s == 0 ? encoder1 : encoder2;
      for (std::size_t l = 0; l < enc.size(); ++l) {
        const std::string pre =
            "enc" + std::to_string(s + 1) + ".layer" + std::to_string(l) + ".";
        reg(pre + "wq", enc[l].wq);
        reg(pre + "bq", enc[l].bq);
        reg(pre + "wk", enc[l].wk);
        reg(pre + "bk", enc[l].bk);
        reg(pre + "wv", enc[l].wv);
        reg(pre + "bv", enc[l].bv);
        reg(pre + "wo", enc[l].wo);
        reg(pre + "bo", enc[l].bo);
        reg(pre + "ln1_gain", enc[l].ln1_gain);
        reg(pre + "ln1_bias", enc[l].ln1_bias);
        reg(pre + "w1", enc[l].w1);
        reg(pre + "b1", enc[l].b1);
        reg(pre + "w2", enc[l].w2);
        reg(pre + "b2", enc[l].b2);
        reg(pre + "ln2_gain", enc[l].ln2_gain);
        reg(pre + "ln2_bias", enc[l].ln2_bias);
      }
    }
    reg("head_w", head_w);
    reg("head_b", head_b);
  }

 private:
  std::vector<Tensor> params_;
  std::vector<std::string> names_;

  static Tensor init_dense(int rows, int cols, Rng& rng) {
    Tensor t = Tensor::zeros({rows, cols}, true);
    for (double& v : *t.data) v = rng.truncated_normal(0.02);
    return t;
  }

  // Embedding table with the padding row pinned to zero.
  static Tensor init_table(int vocab, int d, Rng& rng) {
    Tensor t = init_dense(vocab, d, rng);
    for (int j = 0; j < d; ++j) (*t.data)[j] = 0.0;
    return t;
  }
};

// Sum of the four embedding lookups, one row per token. Padded slots map to
// the all-zero padding rows.
inline Tensor embed_tokens(const KeyNetModel& m, const TokenizedScene& t) {
  Tensor e = add(embedding_rows(m.position_table, t.position),
                 embedding_rows(m.type_table, t.type));
  Tensor f = add(embedding_rows(m.segment_table, t.segment),
                 embedding_rows(m.instance_table, t.instance));
  return add(e, f);
}

// One post-norm transformer stack: per block, multi-head attention with key
// masking, residual + layer norm, GELU feed-forward, residual + layer norm.
inline Tensor encoder_forward(Tensor x, const std::vector<LayerParams>& stack,
                              const ModelConfig& cfg,
                              const std::vector<char>& key_valid,
                              DropoutState& drop) {
  const int d = cfg.d_model;
  const int dh = d / cfg.heads;
  for (const LayerParams& p : stack) {
    Tensor q = add_rowvec(matmul(x, p.wq), p.bq);
    Tensor k = add_rowvec(matmul(x, p.wk), p.bk);
    Tensor v = add_rowvec(matmul(x, p.wv), p.bv);
    std::vector<Tensor> head_outs;
    head_outs.reserve(cfg.heads);
    for (int h = 0; h < cfg.heads; ++h) {
      head_outs.push_back(attention(col_slice(q, h * dh, dh),
                                    col_slice(k, h * dh, dh),
                                    col_slice(v, h * dh, dh), key_valid));
    }
    Tensor attn = cfg.heads == 1 ? head_outs[0] : concat_cols(head_outs);
    attn = drop.apply(add_rowvec(matmul(attn, p.wo), p.bo));
    x = layer_norm(add(x, attn), p.ln1_gain, p.ln1_bias);
    Tensor ff = gelu(add_rowvec(matmul(x, p.w1), p.b1));
    ff = drop.apply(add_rowvec(matmul(ff, p.w2), p.b2));
    x = layer_norm(add(x, ff), p.ln2_gain, p.ln2_bias);
  }
  return x;
}

struct ForwardResult {
  Tensor logits;                  // rows x classes (video mode: one row)
  std::vector<char> actor_valid;  // actor mode: rows backed by a real actor
};

namespace detail {

// Mean over a set of rows as a constant selector matmul, so the pooling is
// differentiable through existing ops.
inline Tensor mean_rows(const Tensor& x, const std::vector<int>& rows) {
  Tensor sel = Tensor::zeros({1, x.shape[0]});
  for (int r : rows) (*sel.data)[r] = 1.0 / static_cast<double>(rows.size());
  return matmul(sel, x);
}

}  // namespace detail

// Single-transformer model over the whole token sequence with a prepended
// classification vector. Video mode reads the class vector's output; actor
// mode mean-pools each actor's token outputs.
inline ForwardResult flat_forward(const KeyNetModel& m,
                                  const TokenizedScene& tokens,
                                  DropoutState& drop) {
  const SceneConfig& sc = m.cfg.scene;
  Tensor e = drop.apply(embed_tokens(m, tokens));
  Tensor seq = concat_rows({m.cls1, e});
  std::vector<char> key_valid(tokens.size() + 1, 0);
  key_valid[0] = 1;
  for (std::size_t i = 0; i < tokens.size(); ++i)
    key_valid[i + 1] = tokens.mask[i];
  Tensor out = encoder_forward(seq, m.encoder1, m.cfg, key_valid, drop);

  ForwardResult result;
  if (m.cfg.head == HeadMode::video) {
    result.logits = add_rowvec(matmul(row_slice(out, 0, 1), m.head_w), m.head_b);
    result.actor_valid = {1};
    return result;
  }
  std::vector<Tensor> rows;
  result.actor_valid.assign(sc.actors, 0);
  for (int n = 0; n < sc.actors; ++n) {
    std::vector<int> picks;
    const int base = n * sc.frames * sc.joints;
    for (int i = 0; i < sc.frames * sc.joints; ++i) {
      if (tokens.mask[base + i]) picks.push_back(base + i + 1);  // +1 for cls
    }
    if (picks.empty()) {
      rows.push_back(Tensor::zeros({1, m.cfg.d_model}));
      continue;
    }
    result.actor_valid[n] = 1;
    rows.push_back(detail::mean_rows(out, picks));
  }
  Tensor pooled = concat_rows(rows);
  result.logits = add_rowvec(matmul(pooled, m.head_w), m.head_b);
  return result;
}

// Two-stage model. Stage 1 encodes each (actor, frame) joint group — and
// each object's contour group — from position + type embeddings alone,
// reading the first output as that group's representation h. Stage 2 runs
// one transformer per actor over its h sequence plus the object context
// rows, each shifted by instance and segment embeddings, and classifies the
// stage-2 class vector's output.
inline ForwardResult hierarchical_forward(const KeyNetModel& m,
                                          const TokenizedScene& tokens,
                                          DropoutState& drop) {
  const SceneConfig& sc = m.cfg.scene;
  const int d = m.cfg.d_model;

  auto encode_group = [&](int slot0, int count) -> Tensor {
    std::vector<int> pos_ids(count), type_ids(count);
    std::vector<char> key_valid(count + 1, 0);
    key_valid[0] = 1;
    for (int i = 0; i < count; ++i) {
      pos_ids[i] = tokens.position[slot0 + i];
      type_ids[i] = tokens.type[slot0 + i];
      key_valid[i + 1] = tokens.mask[slot0 + i];
    }
    Tensor e = drop.apply(add(embedding_rows(m.position_table, pos_ids),
                              embedding_rows(m.type_table, type_ids)));
    Tensor seq = concat_rows({m.cls1, e});
    Tensor out = encoder_forward(seq, m.encoder1, m.cfg, key_valid, drop);
    return row_slice(out, 0, 1);
  };

  // Shift ids come from the token streams themselves, so listing order does
  // not leak into the representation.
  auto group_ids = [&tokens](int slot0, int count) -> std::pair<int, int> {
    for (int i = 0; i < count; ++i) {
      if (tokens.mask[slot0 + i]) {
        return {tokens.instance[slot0 + i], tokens.segment[slot0 + i]};
      }
    }
    return {0, 0};
  };

  // Shared object context rows, one per present object.
  std::vector<Tensor> object_rows;
  for (int j = 0; j < sc.objects; ++j) {
    const int base = sc.actors * sc.frames * sc.joints + j * sc.contour_points;
    const auto [instance_id, segment_id] = group_ids(base, sc.contour_points);
    if (instance_id == 0) continue;
    Tensor h = encode_group(base, sc.contour_points);
    Tensor shift = add(embedding_rows(m.instance_table, {instance_id}),
                       embedding_rows(m.segment_table, {segment_id}));
    object_rows.push_back(add(h, shift));
  }

  std::vector<Tensor> logits_rows;
  std::vector<Tensor> actor_reprs;
  ForwardResult result;
  result.actor_valid.assign(sc.actors, 0);
  for (int n = 0; n < sc.actors; ++n) {
    std::vector<Tensor> seq_rows = {m.cls2};
    for (int t = 0; t < sc.frames; ++t) {
      const int base = (n * sc.frames + t) * sc.joints;
      const auto [instance_id, segment_id] = group_ids(base, sc.joints);
      if (instance_id == 0) continue;
      Tensor h = encode_group(base, sc.joints);
      Tensor shift = add(embedding_rows(m.instance_table, {instance_id}),
                         embedding_rows(m.segment_table, {segment_id}));
      seq_rows.push_back(add(h, shift));
    }
    if (seq_rows.size() == 1) {  // actor absent in every frame
      logits_rows.push_back(Tensor::zeros({1, m.cfg.classes}));
      continue;
    }
    result.actor_valid[n] = 1;
    for (const Tensor& obj : object_rows) seq_rows.push_back(obj);
    Tensor seq = concat_rows(seq_rows);
    std::vector<char> key_valid(seq.shape[0], 1);
    Tensor out = encoder_forward(seq, m.encoder2, m.cfg, key_valid, drop);
    Tensor d_n = row_slice(out, 0, 1);
    actor_reprs.push_back(d_n);
    logits_rows.push_back(add_rowvec(matmul(d_n, m.head_w), m.head_b));
  }

  if (m.cfg.head == HeadMode::video) {
    Tensor pooled;
    if (actor_reprs.empty()) {
      pooled = Tensor::zeros({1, d});
    } else if (actor_reprs.size() == 1) {
      pooled = actor_reprs[0];
    } else {
      Tensor stacked = concat_rows(actor_reprs);
      std::vector<int> all(actor_reprs.size());
      for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
      pooled = detail::mean_rows(stacked, all);
    }
    result.logits = add_rowvec(matmul(pooled, m.head_w), m.head_b);
    result.actor_valid = {1};
    return result;
  }
  result.logits = concat_rows(logits_rows);
  return result;
}

inline ForwardResult model_forward(const KeyNetModel& m,
                                   const TokenizedScene& tokens,
                                   DropoutState& drop) {
  return m.cfg.kind == ModelKind::flat ? flat_forward(m, tokens, drop)
                                       : hierarchical_forward(m, tokens, drop);
}

// Video mode: argmax over the softmax distribution of one logits row.
inline int classify_video(const Tensor& logits, int row = 0) {
  detail::check_2d(logits, "classify_video");
  int best = 0;
  for (int j = 1; j < logits.shape[1]; ++j) {
    if (logits.at(row, j) > logits.at(row, best)) best = j;
  }
  return best;
}

// Actor mode: independent per-class sigmoid scores for one logits row.
inline std::vector<double> actor_scores(const Tensor& logits, int row) {
  detail::check_2d(logits, "actor_scores");
  std::vector<double> out(logits.shape[1]);
  for (int j = 0; j < logits.shape[1]; ++j) out[j] = sigmoid(logits.at(row, j));
  return out;
}

}  // namespace keynet
