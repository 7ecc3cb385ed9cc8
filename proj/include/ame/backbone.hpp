#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "ame/common.hpp"
#include "ame/rng.hpp"
#include "ame/series.hpp"
#include "ame/tape.hpp"

namespace ame {

enum class ModelFamily { ame, standard_moe, dense };

const char* family_name(ModelFamily f);
ModelFamily family_from_name(const std::string& name);

struct BackboneConfig {
  int d_model = 32;
  int n_layers = 2;
  int n_heads = 4;
  int experts_total = 5;
  int experts_shared = 1;
  int top_k = 2;
  int patch_len = 16;
  int max_tokens = 512;
  int expert_hidden = 64;

  int n_specialized() const { return experts_total - experts_shared; }
  void validate() const;
};

// Maximum variates a packed sequence can carry; sized for desk-scale data.
constexpr int kMaxVariates = 8;

// Per-layer, per-token routing snapshot captured during a forward pass.
struct RoutingRecord {
  int n_tokens = 0;
  int n_experts = 0;
  int k = 0;
  std::vector<double> logits;   // [n_tokens * n_experts]
  std::vector<double> probs;    // [n_tokens * n_experts]
  std::vector<int> topk;        // [n_tokens * k]
  std::vector<double> weights;  // [n_tokens * k], renormalized

  int top1(int token) const { return topk[size_t(token) * size_t(k)]; }
};

// One window rendered into constant sequence inputs. Horizon token slots and
// mask-sampled context slots carry zeroed patch rows; their true values only
// appear in the target matrices.
template <class T>
struct PackedInput {
  int n_tokens = 0;
  int tokens_per_variate = 0;
  int ctx_tokens_per_variate = 0;
  Mat<T> patch_rows;             // [n_tokens x P], masked rows zeroed
  Mat<T> observed_col;           // [n_tokens x 1]
  Mat<T> masked_col;             // [n_tokens x 1]
  std::vector<int> variate_ids;  // per token
  std::vector<int> positions;    // per token, within-variate index
  std::vector<char> is_masked;   // per token
  std::vector<char> pad_token;   // per token (all-pad slots; excluded everywhere)
  std::vector<int> masked_idx;   // token indices to predict
  Mat<T> targets;                // [masked x P]
  Mat<T> target_valid;           // [masked x P], 0/1
  bool any_pad = false;
  Mat<T> attn_bias;              // [n x n], 0 or -1e30 on pad columns (when any_pad)
};

// Named parameter arrays plus group tags for gradient reporting.
template <class T>
struct ParamStore {
  struct Entry {
    std::string name;
    std::string group;
    Mat<T> value;
  };
  std::vector<Entry> entries;

  int add(const std::string& name, const std::string& group, Mat<T> v) {
    entries.push_back(Entry{name, group, std::move(v)});
    return int(entries.size()) - 1;
  }
  Mat<T>& operator[](int i) { return entries[size_t(i)].value; }
  const Mat<T>& operator[](int i) const { return entries[size_t(i)].value; }
  int find(const std::string& name) const {
    for (size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return int(i);
    return -1;
  }
  size_t size() const { return entries.size(); }
};

template <class T>
struct LayerParams {
  int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
  int ln2_g, ln2_b;
  int router_w = -1;                       // MoE families
  std::vector<std::array<int, 4>> experts; // per expert: w1, b1, w2, b2
  std::array<int, 4> dense_ffn{-1, -1, -1, -1};
};

template <class T>
struct ModelState {
  BackboneConfig cfg;
  ModelFamily family = ModelFamily::ame;
  ParamStore<T> params;

  int embed_patch_w, embed_patch_b, embed_mask, embed_variate, embed_position;
  std::vector<LayerParams<T>> layers;
  int head_w, head_b;
  int gate_alpha = -1, gate_b = -1;  // present only when the gate is learnable

  void build(ModelFamily fam, const BackboneConfig& config, bool learnable_gate,
             double gate_alpha_init, double gate_b_init);
  void init_params(uint64_t seed);
};

// Per-layer state handed back from a forward pass. Node ids refer to the
// tape used for that pass.
struct LayerNodes {
  int logits_node = -1;
  int probs_node = -1;
  int weights_node = -1;  // [n x k]
  std::vector<int> topk;  // [n x k] flattened
  std::vector<int> expert_out_node;              // per expert, -1 if unused
  std::vector<std::vector<int>> expert_tokens;   // per expert, token indices
  std::vector<std::vector<int>> expert_slot;     // per expert, slot in topk row
};

struct ForwardOut {
  int tokens_node = -1;  // [n x d] final representations
  int pred_node = -1;    // [masked x P], -1 when nothing is masked
  std::vector<LayerNodes> layers;
};

struct ForwardOptions {
  bool capture = false;
  // Frozen per-layer top-k selections (finite-difference mode); outer size
  // n_layers, inner [n_tokens * k].
  const std::vector<std::vector<int>>* frozen_topk = nullptr;
  // Additive router-logit bias rows (the additive-prior ablation); one
  // [n_tokens x E] constant per layer-independent pass.
  const std::vector<double>* additive_logit_bias = nullptr;  // [n_tokens * E]
  // When the gate is learnable, per-token prior rows come from these tape
  // nodes instead of constants (built by the training module).
};

// Render a standardized window into packed constants. ctx_masked flags the
// mask-sampled context token slots (size = total context tokens, or empty
// for none).
template <class T>
PackedInput<T> pack_window(const Window& w, const BackboneConfig& cfg,
                           const std::vector<char>& ctx_masked);

template <class T>
std::vector<int> make_param_leaves(Tape<T>& tape, const ModelState<T>& model, bool requires_grad);

template <class T>
ForwardOut encoder_forward(Tape<T>& tape, const ModelState<T>& model,
                           const std::vector<int>& leaves, const PackedInput<T>& in,
                           const ForwardOptions& opts,
                           std::vector<RoutingRecord>* records = nullptr);

// Full forecasting path: standardize, pack (horizon masked only), run the
// encoder, read head outputs, de-standardize. Returns [variate][t_hor].
template <class T>
std::vector<std::vector<double>> forecast(const ModelState<T>& model, const Window& w,
                                          const std::vector<double>* additive_logit_bias = nullptr);

// Top-k selection used by the router: k largest logits, ties to the lower
// expert index. Exposed for tests.
std::vector<int> topk_indices(const double* logits, int n, int k);

// ---------------------------------------------------------------------------
// implementation
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
void init_matrix(Mat<T>& m, Rng& rng, double scale) {
  for (auto& x : m.d) x = T(rng.normal() * scale);
}

}  // namespace detail

inline const char* family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::ame: return "ame";
    case ModelFamily::standard_moe: return "standard-moe";
    default: return "dense";
  }
}

inline ModelFamily family_from_name(const std::string& name) {
  if (name == "ame") return ModelFamily::ame;
  if (name == "standard-moe") return ModelFamily::standard_moe;
  if (name == "dense") return ModelFamily::dense;
  fail(ErrorCode::invalid_config, "unknown model family: " + name);
}

inline void BackboneConfig::validate() const {
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0)
    fail(ErrorCode::invalid_config, "backbone: d_model must be divisible by n_heads");
  if (n_layers < 0) fail(ErrorCode::invalid_config, "backbone: n_layers must be >= 0");
  if (experts_total < 1 || top_k < 1 || top_k > experts_total)
    fail(ErrorCode::invalid_config, "backbone: need 1 <= top_k <= experts_total");
  if (experts_shared < 0 || experts_shared >= experts_total)
    fail(ErrorCode::invalid_config, "backbone: experts_shared must be in [0, experts_total)");
  if (patch_len < 1) fail(ErrorCode::invalid_config, "backbone: patch_len must be >= 1");
  if (max_tokens < 1) fail(ErrorCode::invalid_config, "backbone: max_tokens must be >= 1");
  if (expert_hidden < 1) fail(ErrorCode::invalid_config, "backbone: expert_hidden must be >= 1");
}

inline std::vector<int> topk_indices(const double* logits, int n, int k) {
  std::vector<int> idx(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) idx[size_t(i)] = i;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  idx.resize(size_t(k));
  return idx;
}

template <class T>
void ModelState<T>::build(ModelFamily fam, const BackboneConfig& config, bool learnable_gate,
                          double gate_alpha_init, double gate_b_init) {
  config.validate();
  cfg = config;
  family = fam;
  const int d = cfg.d_model;
  const int p = cfg.patch_len;
  const int e = cfg.experts_total;
  const int h = cfg.expert_hidden;

  embed_patch_w = params.add("embed.patch_w", "embed", Mat<T>(p, d));
  embed_patch_b = params.add("embed.patch_b", "embed", Mat<T>(1, d));
  embed_mask = params.add("embed.mask", "embed", Mat<T>(1, d));
  embed_variate = params.add("embed.variate", "embed", Mat<T>(kMaxVariates, d));
  embed_position = params.add("embed.position", "embed", Mat<T>(cfg.max_tokens, d));

  layers.clear();
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    LayerParams<T> lp;
    lp.ln1_g = params.add(pre + "ln1.g", "norm", Mat<T>::filled(1, d, T(1)));
    lp.ln1_b = params.add(pre + "ln1.b", "norm", Mat<T>(1, d));
    lp.wq = params.add(pre + "attn.wq", "attn", Mat<T>(d, d));
    lp.bq = params.add(pre + "attn.bq", "attn", Mat<T>(1, d));
    lp.wk = params.add(pre + "attn.wk", "attn", Mat<T>(d, d));
    lp.bk = params.add(pre + "attn.bk", "attn", Mat<T>(1, d));
    lp.wv = params.add(pre + "attn.wv", "attn", Mat<T>(d, d));
    lp.bv = params.add(pre + "attn.bv", "attn", Mat<T>(1, d));
    lp.wo = params.add(pre + "attn.wo", "attn", Mat<T>(d, d));
    lp.bo = params.add(pre + "attn.bo", "attn", Mat<T>(1, d));
    lp.ln2_g = params.add(pre + "ln2.g", "norm", Mat<T>::filled(1, d, T(1)));
    lp.ln2_b = params.add(pre + "ln2.b", "norm", Mat<T>(1, d));
    if (family == ModelFamily::dense) {
      lp.dense_ffn[0] = params.add(pre + "ffn.w1", "expert", Mat<T>(d, h));
      lp.dense_ffn[1] = params.add(pre + "ffn.b1", "expert", Mat<T>(1, h));
      lp.dense_ffn[2] = params.add(pre + "ffn.w2", "expert", Mat<T>(h, d));
      lp.dense_ffn[3] = params.add(pre + "ffn.b2", "expert", Mat<T>(1, d));
    } else {
      lp.router_w = params.add(pre + "router.w", "router", Mat<T>(d, e));
      for (int x = 0; x < e; ++x) {
        const std::string ep = pre + "expert" + std::to_string(x) + ".";
        std::array<int, 4> ids{};
        ids[0] = params.add(ep + "w1", "expert", Mat<T>(d, h));
        ids[1] = params.add(ep + "b1", "expert", Mat<T>(1, h));
        ids[2] = params.add(ep + "w2", "expert", Mat<T>(h, d));
        ids[3] = params.add(ep + "b2", "expert", Mat<T>(1, d));
        lp.experts.push_back(ids);
      }
    }
    layers.push_back(std::move(lp));
  }
  head_w = params.add("head.w", "head", Mat<T>(d, p));
  head_b = params.add("head.b", "head", Mat<T>(1, p));
  if (learnable_gate && family == ModelFamily::ame) {
    gate_alpha = params.add("gate.alpha", "gate", Mat<T>::filled(1, 1, T(gate_alpha_init)));
    gate_b = params.add("gate.b", "gate", Mat<T>::filled(1, 1, T(gate_b_init)));
  }
}

template <class T>
void ModelState<T>::init_params(uint64_t seed) {
  for (auto& entry : params.entries) {
    const auto& name = entry.name;
    Mat<T>& m = entry.value;
    Rng rng = Rng::stream(seed, "init:" + name);
    if (name.ends_with(".g") || name == "gate.alpha" || name == "gate.b") continue;
    if (name.ends_with(".b") || name.ends_with("_b") || name.ends_with(".bq") ||
        name.ends_with(".bk") || name.ends_with(".bv") || name.ends_with(".bo") ||
        name.ends_with(".b1") || name.ends_with(".b2")) {
      for (auto& x : m.d) x = T(0);
      continue;
    }
    if (name.starts_with("embed.") ) {
      detail::init_matrix(m, rng, 0.02);
      continue;
    }
    const double scale = std::sqrt(2.0 / double(m.rows + m.cols));
    detail::init_matrix(m, rng, scale);
  }
}

template <class T>
PackedInput<T> pack_window(const Window& w, const BackboneConfig& cfg,
                           const std::vector<char>& ctx_masked) {
  const int n_var = int(w.n_variates());
  if (n_var < 1) fail(ErrorCode::invalid_argument, "pack_window: empty window");
  if (n_var > kMaxVariates)
    fail(ErrorCode::invalid_argument, "pack_window: too many variates");
  const int p = cfg.patch_len;
  const int ctx_p = int((w.t_ctx() + size_t(p) - 1) / size_t(p));
  const int hor_p = int((w.t_hor() + size_t(p) - 1) / size_t(p));
  const int tpv = ctx_p + hor_p;
  const int n = n_var * tpv;
  if (n > cfg.max_tokens)
    fail(ErrorCode::invalid_argument, "pack_window: sequence too long (" + std::to_string(n) +
                                          " tokens > " + std::to_string(cfg.max_tokens) + ")");
  if (!ctx_masked.empty() && int(ctx_masked.size()) != n_var * ctx_p)
    fail(ErrorCode::shape_mismatch, "pack_window: ctx_masked size mismatch");

  PackedInput<T> out;
  out.n_tokens = n;
  out.tokens_per_variate = tpv;
  out.ctx_tokens_per_variate = ctx_p;
  out.patch_rows = Mat<T>(n, p);
  out.observed_col = Mat<T>(n, 1);
  out.masked_col = Mat<T>(n, 1);
  out.variate_ids.resize(size_t(n));
  out.positions.resize(size_t(n));
  out.is_masked.assign(size_t(n), 0);
  out.pad_token.assign(size_t(n), 0);

  std::vector<std::pair<int, const Patch*>> masked_tokens;  // (token, patch)
  std::vector<std::vector<Patch>> ctx_patches(static_cast<size_t>(n_var));
  std::vector<std::vector<Patch>> hor_patches(static_cast<size_t>(n_var));
  for (int v = 0; v < n_var; ++v) {
    ctx_patches[size_t(v)] = patchify(w.context[size_t(v)], p);
    hor_patches[size_t(v)] = patchify(w.horizon[size_t(v)], p);
  }

  for (int v = 0; v < n_var; ++v) {
    for (int i = 0; i < tpv; ++i) {
      const int t = v * tpv + i;
      out.variate_ids[size_t(t)] = v;
      out.positions[size_t(t)] = i;
      const bool in_ctx = i < ctx_p;
      const Patch& patch =
          in_ctx ? ctx_patches[size_t(v)][size_t(i)] : hor_patches[size_t(v)][size_t(i - ctx_p)];
      const bool masked =
          !in_ctx || (!ctx_masked.empty() && ctx_masked[size_t(v * ctx_p + i)] != 0);
      out.is_masked[size_t(t)] = masked ? 1 : 0;
      out.observed_col(t, 0) = masked ? T(0) : T(1);
      out.masked_col(t, 0) = masked ? T(1) : T(0);
      if (masked) {
        masked_tokens.push_back({t, &patch});
      } else {
        for (int j = 0; j < p; ++j) out.patch_rows(t, j) = T(patch.values[size_t(j)]);
      }
    }
  }

  out.masked_idx.reserve(masked_tokens.size());
  out.targets = Mat<T>(int(masked_tokens.size()), p);
  out.target_valid = Mat<T>(int(masked_tokens.size()), p);
  for (size_t i = 0; i < masked_tokens.size(); ++i) {
    out.masked_idx.push_back(masked_tokens[i].first);
    const Patch& patch = *masked_tokens[i].second;
    for (int j = 0; j < p; ++j) {
      out.targets(int(i), j) = T(patch.values[size_t(j)]);
      out.target_valid(int(i), j) = patch.valid[size_t(j)] ? T(1) : T(0);
    }
  }
  return out;
}

template <class T>
std::vector<int> make_param_leaves(Tape<T>& tape, const ModelState<T>& model, bool requires_grad) {
  std::vector<int> leaves;
  leaves.reserve(model.params.size());
  for (const auto& entry : model.params.entries)
    leaves.push_back(tape.leaf(entry.value, requires_grad));
  return leaves;
}

template <class T>
ForwardOut encoder_forward(Tape<T>& tape, const ModelState<T>& model,
                           const std::vector<int>& leaves, const PackedInput<T>& in,
                           const ForwardOptions& opts, std::vector<RoutingRecord>* records) {
  const BackboneConfig& cfg = model.cfg;
  const int n = in.n_tokens;
  const int d = cfg.d_model;
  const int e = cfg.experts_total;
  const int k = cfg.top_k;
  const int dh = d / cfg.n_heads;

  // embeddings: projected observed patches, mask embedding on masked slots,
  // plus variate and position lookups
  const int patches = tape.constant(in.patch_rows);
  const int obs = tape.constant(in.observed_col);
  const int msk = tape.constant(in.masked_col);
  int x = tape.add_rowvec(tape.matmul(patches, leaves[size_t(model.embed_patch_w)]),
                          leaves[size_t(model.embed_patch_b)]);
  x = tape.scale_rows(x, obs);
  const int mask_rows = tape.scale_rows(tape.broadcast_row(leaves[size_t(model.embed_mask)], n), msk);
  x = tape.add(x, mask_rows);
  x = tape.add(x, tape.gather_rows(leaves[size_t(model.embed_variate)], in.variate_ids));
  x = tape.add(x, tape.gather_rows(leaves[size_t(model.embed_position)], in.positions));

  int attn_bias = -1;
  if (in.any_pad) attn_bias = tape.constant(in.attn_bias);

  ForwardOut out;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams<T>& lp = model.layers[size_t(l)];
    // self-attention, pre-norm
    const int xn = tape.layernorm(x, leaves[size_t(lp.ln1_g)], leaves[size_t(lp.ln1_b)]);
    const int q = tape.add_rowvec(tape.matmul(xn, leaves[size_t(lp.wq)]), leaves[size_t(lp.bq)]);
    const int kk = tape.add_rowvec(tape.matmul(xn, leaves[size_t(lp.wk)]), leaves[size_t(lp.bk)]);
    const int vv = tape.add_rowvec(tape.matmul(xn, leaves[size_t(lp.wv)]), leaves[size_t(lp.bv)]);
    std::vector<int> heads;
    for (int h = 0; h < cfg.n_heads; ++h) {
      const int qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
      const int kh = tape.slice_cols(kk, h * dh, (h + 1) * dh);
      const int vh = tape.slice_cols(vv, h * dh, (h + 1) * dh);
      int scores = tape.smul(tape.matmul_nt(qh, kh), 1.0 / std::sqrt(double(dh)));
      if (attn_bias >= 0) scores = tape.add(scores, attn_bias);
      const int a = tape.row_softmax(scores);
      heads.push_back(tape.matmul(a, vh));
    }
    const int ctx = heads.size() == 1 ? heads[0] : tape.concat_cols(heads);
    const int attn_out =
        tape.add_rowvec(tape.matmul(ctx, leaves[size_t(lp.wo)]), leaves[size_t(lp.bo)]);
    x = tape.add(x, attn_out);

    // feed-forward / MoE, pre-norm
    const int xn2 = tape.layernorm(x, leaves[size_t(lp.ln2_g)], leaves[size_t(lp.ln2_b)]);
    if (model.family == ModelFamily::dense) {
      const int h1 = tape.gelu(tape.add_rowvec(tape.matmul(xn2, leaves[size_t(lp.dense_ffn[0])]),
                                               leaves[size_t(lp.dense_ffn[1])]));
      const int ff = tape.add_rowvec(tape.matmul(h1, leaves[size_t(lp.dense_ffn[2])]),
                                     leaves[size_t(lp.dense_ffn[3])]);
      x = tape.add(x, ff);
      out.layers.push_back(LayerNodes{});
      continue;
    }

    int logits = tape.matmul(xn2, leaves[size_t(lp.router_w)]);
    if (opts.additive_logit_bias) {
      Mat<T> bias(n, e);
      for (size_t i = 0; i < bias.size(); ++i)
        bias.d[i] = T((*opts.additive_logit_bias)[i]);
      logits = tape.add(logits, tape.constant(std::move(bias)));
    }
    const int probs = tape.row_softmax(logits);

    LayerNodes ln;
    ln.logits_node = logits;
    ln.probs_node = probs;
    ln.topk.resize(size_t(n) * size_t(k));
    const Mat<T>& logit_vals = tape.val(logits);
    if (opts.frozen_topk) {
      ln.topk = (*opts.frozen_topk)[size_t(l)];
    } else {
      std::vector<double> row(static_cast<size_t>(e));
      for (int t = 0; t < n; ++t) {
        for (int j = 0; j < e; ++j) row[size_t(j)] = double(logit_vals(t, j));
        const auto sel = topk_indices(row.data(), e, k);
        for (int j = 0; j < k; ++j) ln.topk[size_t(t) * size_t(k) + size_t(j)] = sel[size_t(j)];
      }
    }

    // renormalized combination weights, one column per top-k slot
    std::vector<int> slot_cols;
    std::vector<int> all_rows(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t) all_rows[size_t(t)] = t;
    for (int j = 0; j < k; ++j) {
      std::vector<int> cols(static_cast<size_t>(n));
      for (int t = 0; t < n; ++t) cols[size_t(t)] = ln.topk[size_t(t) * size_t(k) + size_t(j)];
      slot_cols.push_back(tape.take_entries(probs, all_rows, cols));
    }
    const int w_sel = slot_cols.size() == 1 ? slot_cols[0] : tape.concat_cols(slot_cols);
    const int w_norm = tape.scale_rows(w_sel, tape.recip(tape.rowsum(w_sel)));
    ln.weights_node = w_norm;

    // dispatch tokens to experts
    ln.expert_out_node.assign(size_t(e), -1);
    ln.expert_tokens.assign(size_t(e), {});
    ln.expert_slot.assign(size_t(e), {});
    for (int t = 0; t < n; ++t) {
      for (int j = 0; j < k; ++j) {
        const int ex = ln.topk[size_t(t) * size_t(k) + size_t(j)];
        ln.expert_tokens[size_t(ex)].push_back(t);
        ln.expert_slot[size_t(ex)].push_back(j);
      }
    }
    int moe_out = tape.constant(Mat<T>(n, d));
    for (int ex = 0; ex < e; ++ex) {
      if (ln.expert_tokens[size_t(ex)].empty()) continue;
      const auto& ids = lp.experts[size_t(ex)];
      const int he = tape.gather_rows(xn2, ln.expert_tokens[size_t(ex)]);
      const int h1 = tape.gelu(
          tape.add_rowvec(tape.matmul(he, leaves[size_t(ids[0])]), leaves[size_t(ids[1])]));
      const int oe =
          tape.add_rowvec(tape.matmul(h1, leaves[size_t(ids[2])]), leaves[size_t(ids[3])]);
      ln.expert_out_node[size_t(ex)] = oe;
      const int we =
          tape.take_entries(w_norm, ln.expert_tokens[size_t(ex)], ln.expert_slot[size_t(ex)]);
      const int weighted = tape.scale_rows(oe, we);
      moe_out = tape.add(moe_out, tape.scatter_rows(weighted, ln.expert_tokens[size_t(ex)], n));
    }
    x = tape.add(x, moe_out);

    if (records) {
      RoutingRecord rec;
      rec.n_tokens = n;
      rec.n_experts = e;
      rec.k = k;
      rec.logits.resize(size_t(n) * size_t(e));
      rec.probs.resize(size_t(n) * size_t(e));
      const Mat<T>& pv = tape.val(probs);
      const Mat<T>& lv = tape.val(logits);
      for (int t = 0; t < n; ++t)
        for (int j = 0; j < e; ++j) {
          rec.logits[size_t(t) * size_t(e) + size_t(j)] = double(lv(t, j));
          rec.probs[size_t(t) * size_t(e) + size_t(j)] = double(pv(t, j));
        }
      rec.topk.assign(ln.topk.begin(), ln.topk.end());
      rec.weights.resize(size_t(n) * size_t(k));
      const Mat<T>& wv = tape.val(w_norm);
      for (int t = 0; t < n; ++t)
        for (int j = 0; j < k; ++j)
          rec.weights[size_t(t) * size_t(k) + size_t(j)] = double(wv(t, j));
      records->push_back(std::move(rec));
    }
    out.layers.push_back(std::move(ln));
  }

  out.tokens_node = x;
  if (!in.masked_idx.empty()) {
    const int hm = tape.gather_rows(x, in.masked_idx);
    out.pred_node = tape.add_rowvec(tape.matmul(hm, leaves[size_t(model.head_w)]),
                                    leaves[size_t(model.head_b)]);
  }
  return out;
}

template <class T>
std::vector<std::vector<double>> forecast(const ModelState<T>& model, const Window& w,
                                          const std::vector<double>* additive_logit_bias) {
  auto [wn, stats] = standardize_window(w);
  const auto packed = pack_window<T>(wn, model.cfg, {});
  Tape<T> tape;
  const auto leaves = make_param_leaves(tape, model, /*requires_grad=*/false);
  ForwardOptions opts;
  opts.additive_logit_bias = additive_logit_bias;
  const auto fwd = encoder_forward(tape, model, leaves, packed, opts);

  const int n_var = int(w.n_variates());
  const int t_hor = int(w.t_hor());
  const int p = model.cfg.patch_len;
  std::vector<std::vector<double>> out(static_cast<size_t>(n_var), std::vector<double>(static_cast<size_t>(t_hor)));
  const Mat<T>& pred = tape.val(fwd.pred_node);
  // masked rows follow token order: per variate, horizon patches in sequence
  for (size_t row = 0; row < packed.masked_idx.size(); ++row) {
    const int t = packed.masked_idx[row];
    const int v = packed.variate_ids[size_t(t)];
    const int i = packed.positions[size_t(t)] - packed.ctx_tokens_per_variate;
    for (int j = 0; j < p; ++j) {
      const int pos = i * p + j;
      if (pos < t_hor) {
        out[size_t(v)][size_t(pos)] =
            double(pred(int(row), j)) * stats.scale[size_t(v)] + stats.mean[size_t(v)];
      }
    }
  }
  return out;
}


}  // namespace ame
