#pragma once

// Template implementations for training.hpp; include that header instead.

namespace ame {

namespace detail {

// Token eligibility for the KL term: padding is always excluded, masked
// tokens only count under all-tokens mode.
template <class T>
Mat<T> kl_token_mask(const PackedInput<T>& packed, KlTokens mode, double* count_out) {
  Mat<T> w(packed.n_tokens, 1);
  double count = 0.0;
  for (int t = 0; t < packed.n_tokens; ++t) {
    const bool pad = packed.pad_token[size_t(t)] != 0;
    const bool masked = packed.is_masked[size_t(t)] != 0;
    const bool ok = !pad && (mode == KlTokens::all_tokens || !masked);
    w(t, 0) = ok ? T(1) : T(0);
    count += ok ? 1.0 : 0.0;
  }
  *count_out = count;
  return w;
}

// Smoothed per-token prior rows (fixed-gate path).
template <class T>
void fixed_prior_mats(const PackedInput<T>& packed, const std::vector<VariatePrior>& priors,
                      int n_experts, Mat<T>& qmat, Mat<T>& logq) {
  qmat = Mat<T>(packed.n_tokens, n_experts);
  logq = Mat<T>(packed.n_tokens, n_experts);
  for (int t = 0; t < packed.n_tokens; ++t) {
    const auto& q = priors[size_t(packed.variate_ids[size_t(t)])].q_smoothed;
    for (int e2 = 0; e2 < n_experts; ++e2) {
      qmat(t, e2) = T(q[size_t(e2)]);
      logq(t, e2) = T(std::log(q[size_t(e2)]));
    }
  }
}

// Tape-built per-token prior rows when alpha/b are learnable.
template <class T>
int learnable_prior_node(Tape<T>& tape, const ModelState<T>& model,
                         const std::vector<int>& leaves, const PackedInput<T>& packed,
                         const std::vector<VariatePrior>& priors, const AnchorMap& map) {
  const int e = model.cfg.experts_total;
  const int n_var = int(priors.size());
  const double eps = 1e-8;
  int qstack = tape.constant(Mat<T>(n_var, e));
  for (int v = 0; v < n_var; ++v) {
    const auto& vp = priors[size_t(v)];
    Mat<T> qsp_row(1, map.n_specialized);
    for (int i = 0; i < map.n_specialized; ++i) qsp_row(0, i) = T(vp.q_sp[size_t(i)]);
    const int qsp_const = tape.constant(std::move(qsp_row));
    int row;
    if (map.n_shared > 0) {
      const int z = tape.sub(tape.smul(leaves[size_t(model.gate_alpha)], vp.h_mean),
                             leaves[size_t(model.gate_b)]);
      const int pi = tape.smul(tape.sigmoid(z), 1.0 - vp.s_max);
      const int one_minus_pi = tape.sub(tape.constant(Mat<T>::filled(1, 1, T(1))), pi);
      const int spec = tape.matmul(one_minus_pi, qsp_const);
      const int shared =
          tape.matmul(pi, tape.constant(Mat<T>::filled(1, map.n_shared, T(1.0 / map.n_shared))));
      row = tape.concat_cols({spec, shared});
    } else {
      row = qsp_const;  // pi_shared forced to 0 without shared experts
    }
    const int smoothed = tape.smul(tape.addc(row, eps), 1.0 / (1.0 + double(e) * eps));
    qstack = tape.add(qstack, tape.scatter_rows(smoothed, {v}, n_var));
  }
  return tape.gather_rows(qstack, packed.variate_ids);
}

}  // namespace detail

template <class T>
BuiltLoss build_total_loss(Tape<T>& tape, const ModelState<T>& model,
                           const std::vector<int>& leaves,
                           const std::vector<BatchItem<T>>& batch, const LossConfig& lc,
                           const AnchorMap& map, bool capture_records) {
  lc.validate();
  const int n_layers = model.cfg.n_layers;
  const int n_experts = model.cfg.experts_total;
  const bool moe = model.family != ModelFamily::dense;
  const bool want_prior = lc.lambda_prior > 0.0 && moe && n_layers > 0;
  const bool want_ortho = lc.lambda_ortho > 0.0 && moe && n_layers > 0;
  const bool learnable_gate = model.gate_alpha >= 0;
  const auto lambda = layer_weights(n_layers, lc.lambda_max);

  BuiltLoss out;
  int task_sum = -1;
  double task_count = 0.0;
  std::vector<int> kl_sum(size_t(std::max(n_layers, 1)), -1);
  std::vector<double> kl_count(size_t(std::max(n_layers, 1)), 0.0);
  int ortho_sum = -1;
  int64_t ortho_count = 0;

  for (const auto& item : batch) {
    ForwardOptions opts;
    opts.capture = capture_records;
    if (!item.frozen_topk.empty()) opts.frozen_topk = &item.frozen_topk;
    if (!item.additive_logit_bias.empty()) opts.additive_logit_bias = &item.additive_logit_bias;
    std::vector<RoutingRecord> recs;
    const ForwardOut fwd = encoder_forward(tape, model, leaves, item.packed, opts,
                                           capture_records ? &recs : nullptr);
    if (capture_records) out.records.push_back(std::move(recs));

    if (fwd.pred_node >= 0 && item.packed.targets.rows > 0) {
      const int tgt = tape.constant(item.packed.targets);
      const int valid = tape.constant(item.packed.target_valid);
      const int err = tape.mul(tape.abs(tape.sub(fwd.pred_node, tgt)), valid);
      const int s = tape.sum(err);
      task_sum = task_sum < 0 ? s : tape.add(task_sum, s);
      for (const T v : item.packed.target_valid.d) task_count += double(v);
    }

    if (want_prior) {
      const int n_var = item.packed.tokens_per_variate > 0
                            ? item.packed.n_tokens / item.packed.tokens_per_variate
                            : 0;
      if (int(item.priors.size()) < n_var)
        fail(ErrorCode::invalid_argument, "build_total_loss: missing priors for variates");
      double mask_count = 0.0;
      const Mat<T> mask = detail::kl_token_mask(item.packed, lc.apply_kl_to, &mask_count);
      if (mask_count > 0.0) {
        const int mask_c = tape.constant(mask);
        int qmat_node = -1, logq_node = -1;
        if (learnable_gate) {
          qmat_node = detail::learnable_prior_node(tape, model, leaves, item.packed,
                                                   item.priors, map);
          logq_node = tape.log_clamped(qmat_node);
        } else {
          Mat<T> qmat, logq;
          detail::fixed_prior_mats(item.packed, item.priors, n_experts, qmat, logq);
          qmat_node = tape.constant(std::move(qmat));
          logq_node = tape.constant(std::move(logq));
        }
        for (int l = 0; l < n_layers; ++l) {
          const int probs = fwd.layers[size_t(l)].probs_node;
          int rows;
          if (lc.kl_direction == KlDirection::forward) {
            rows = tape.rowsum(tape.mul(probs, tape.sub(tape.log_clamped(probs), logq_node)));
          } else {
            rows = tape.rowsum(tape.mul(qmat_node, tape.sub(logq_node, tape.log_clamped(probs))));
          }
          const int s = tape.sum(tape.mul(rows, mask_c));
          kl_sum[size_t(l)] = kl_sum[size_t(l)] < 0 ? s : tape.add(kl_sum[size_t(l)], s);
          kl_count[size_t(l)] += mask_count;
        }
      }
    }

    if (want_ortho) {
      for (int l = 0; l < n_layers; ++l) {
        const LayerNodes& ln = fwd.layers[size_t(l)];
        std::vector<int> normalized(size_t(n_experts), -1);
        auto normalized_out = [&](int ex) {
          if (normalized[size_t(ex)] < 0) {
            const int oe = ln.expert_out_node[size_t(ex)];
            const int nrm = tape.sqrt_op(tape.addc(tape.rowsum(tape.mul(oe, oe)), 1e-12));
            normalized[size_t(ex)] = tape.scale_rows(oe, tape.recip(nrm));
          }
          return normalized[size_t(ex)];
        };
        for (int d = 0; d < kNumDescriptors; ++d) {
          const auto& group = map.assignment[size_t(d)];
          for (size_t i = 0; i < group.size(); ++i) {
            for (size_t j = i + 1; j < group.size(); ++j) {
              const int e1 = group[i], e2 = group[j];
              if (ln.expert_out_node[size_t(e1)] < 0 || ln.expert_out_node[size_t(e2)] < 0)
                continue;
              // tokens where both experts fire; expert token lists ascend
              const auto& t1 = ln.expert_tokens[size_t(e1)];
              const auto& t2 = ln.expert_tokens[size_t(e2)];
              std::vector<int> rows1, rows2;
              size_t a = 0, b = 0;
              while (a < t1.size() && b < t2.size()) {
                if (t1[a] == t2[b]) {
                  rows1.push_back(int(a));
                  rows2.push_back(int(b));
                  ++a;
                  ++b;
                } else if (t1[a] < t2[b]) {
                  ++a;
                } else {
                  ++b;
                }
              }
              if (rows1.empty()) continue;
              const int g1 = tape.gather_rows(normalized_out(e1), rows1);
              const int g2 = tape.gather_rows(normalized_out(e2), rows2);
              const int s = tape.sum(tape.abs(tape.rowsum(tape.mul(g1, g2))));
              ortho_sum = ortho_sum < 0 ? s : tape.add(ortho_sum, s);
              ortho_count += int64_t(rows1.size());
            }
          }
        }
      }
    }
  }

  if (task_sum < 0 || task_count <= 0.0)
    fail(ErrorCode::invalid_argument, "build_total_loss: no valid masked positions");
  out.task_node = tape.smul(task_sum, 1.0 / task_count);
  int total = out.task_node;

  if (want_prior) {
    int prior = -1;
    for (int l = 0; l < n_layers; ++l) {
      if (kl_sum[size_t(l)] < 0 || kl_count[size_t(l)] <= 0.0) continue;
      const int term =
          tape.smul(kl_sum[size_t(l)], lambda[size_t(l)] / (double(n_layers) * kl_count[size_t(l)]));
      prior = prior < 0 ? term : tape.add(prior, term);
    }
    if (prior < 0) prior = tape.constant(Mat<T>(1, 1));
    out.prior_node = prior;
    total = tape.add(total, tape.smul(prior, lc.lambda_prior));
  }
  if (want_ortho) {
    const int ortho = ortho_count > 0 ? tape.smul(ortho_sum, 1.0 / double(ortho_count))
                                      : tape.constant(Mat<T>(1, 1));
    out.ortho_node = ortho;
    total = tape.add(total, tape.smul(ortho, lc.lambda_ortho));
  }
  out.total_node = total;
  return out;
}

template <class T>
StepStats train_step(ModelState<T>& model, AdamW<T>& opt, const std::vector<BatchItem<T>>& batch,
                     const LossConfig& lc, const AnchorMap& map, double lr, double clip_norm) {
  Tape<T> tape;
  const auto leaves = make_param_leaves(tape, model, /*requires_grad=*/true);
  const BuiltLoss loss = build_total_loss(tape, model, leaves, batch, lc, map,
                                          /*capture_records=*/true);
  StepStats stats;
  stats.total = double(tape.val(loss.total_node)(0, 0));
  stats.task = double(tape.val(loss.task_node)(0, 0));
  stats.prior = loss.prior_node >= 0 ? double(tape.val(loss.prior_node)(0, 0)) : 0.0;
  stats.ortho = loss.ortho_node >= 0 ? double(tape.val(loss.ortho_node)(0, 0)) : 0.0;
  if (!std::isfinite(stats.total))
    fail(ErrorCode::divergence, "train_step: non-finite loss");

  tape.backward(loss.total_node);

  // pooled top-1 usage entropy across layers
  if (model.family != ModelFamily::dense && model.cfg.n_layers > 0) {
    std::vector<int64_t> counts(size_t(model.cfg.experts_total), 0);
    int64_t total_tokens = 0;
    for (const auto& recs : loss.records) {
      for (const auto& r : recs) {
        for (int t = 0; t < r.n_tokens; ++t) {
          counts[size_t(r.top1(t))]++;
          ++total_tokens;
        }
      }
    }
    if (total_tokens > 0 && model.cfg.experts_total > 1) {
      double h = 0.0;
      for (const int64_t c : counts) {
        if (c > 0) {
          const double p = double(c) / double(total_tokens);
          h -= p * std::log(p);
        }
      }
      stats.usage_entropy = h / std::log(double(model.cfg.experts_total));
    }
  }

  std::vector<Mat<T>> grads;
  grads.reserve(model.params.size());
  for (size_t i = 0; i < model.params.size(); ++i) {
    const Mat<T>& g = tape.grad(leaves[i]);
    if (g.size() > 0) {
      grads.push_back(g);
    } else {
      grads.emplace_back(model.params[int(i)].rows, model.params[int(i)].cols);
    }
  }
  std::vector<Mat<T>*> grad_ptrs;
  for (auto& g : grads) grad_ptrs.push_back(&g);
  stats.grad_norm = clip_global_norm(grad_ptrs, clip_norm);

  std::vector<Mat<T>*> param_ptrs;
  std::vector<const Mat<T>*> grad_cptrs;
  for (size_t i = 0; i < model.params.size(); ++i) {
    param_ptrs.push_back(&model.params[int(i)]);
    grad_cptrs.push_back(&grads[i]);
  }
  opt.step(param_ptrs, grad_cptrs, lr);
  return stats;
}

}  // namespace ame
