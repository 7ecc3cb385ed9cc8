#include "ame/training.hpp"

#include <cmath>

namespace ame {

std::vector<double> layer_weights(int n_layers, double lambda_max) {
  if (n_layers < 0) fail(ErrorCode::invalid_argument, "layer_weights: negative layer count");
  std::vector<double> w(size_t(n_layers), 0.0);
  if (n_layers == 1) {
    w[0] = lambda_max;
  } else {
    for (int l = 0; l < n_layers; ++l)
      w[size_t(l)] = lambda_max * double(l) / double(n_layers - 1);
  }
  return w;
}

double task_loss(const Mat<double>& pred, const Mat<double>& target, const Mat<double>& valid) {
  if (!pred.same_shape(target) || !pred.same_shape(valid))
    fail(ErrorCode::shape_mismatch, "task_loss: shape mismatch");
  double acc = 0.0, count = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    acc += std::fabs(pred.d[i] - target.d[i]) * valid.d[i];
    count += valid.d[i];
  }
  if (count <= 0.0) fail(ErrorCode::invalid_argument, "task_loss: no valid positions");
  return acc / count;
}

double prior_alignment_loss(const std::vector<RoutingRecord>& records,
                            const std::vector<std::vector<double>>& q_per_token,
                            const std::vector<double>& lambda, KlDirection dir,
                            const std::vector<char>& token_mask) {
  if (records.size() != lambda.size())
    fail(ErrorCode::mismatch, "prior_alignment_loss: layer count mismatch");
  if (records.empty()) return 0.0;
  const int n_layers = int(records.size());
  double total = 0.0;
  for (int l = 0; l < n_layers; ++l) {
    const RoutingRecord& r = records[size_t(l)];
    if (int(q_per_token.size()) != r.n_tokens || int(token_mask.size()) != r.n_tokens)
      fail(ErrorCode::mismatch, "prior_alignment_loss: token count mismatch");
    double layer_sum = 0.0, layer_count = 0.0;
    for (int t = 0; t < r.n_tokens; ++t) {
      if (!token_mask[size_t(t)]) continue;
      const auto& q = q_per_token[size_t(t)];
      double kl = 0.0;
      for (int e = 0; e < r.n_experts; ++e) {
        const double p = r.probs[size_t(t) * size_t(r.n_experts) + size_t(e)];
        const double qe = q[size_t(e)];
        if (dir == KlDirection::forward) {
          if (p > 0.0) kl += p * (std::log(std::max(p, 1e-30)) - std::log(qe));
        } else {
          kl += qe * (std::log(qe) - std::log(std::max(p, 1e-30)));
        }
      }
      layer_sum += kl;
      layer_count += 1.0;
    }
    if (layer_count > 0.0) total += lambda[size_t(l)] * layer_sum / layer_count;
  }
  return total / double(n_layers);
}

double orthogonality_loss(const std::vector<LayerExpertOutputs>& layers, const AnchorMap& map) {
  double acc = 0.0;
  int64_t count = 0;
  for (const auto& layer : layers) {
    const int n_experts = int(layer.tokens.size());
    // normalized copies, built lazily per expert
    std::vector<Mat<double>> normalized(static_cast<size_t>(n_experts));
    auto norm_of = [&](int e) -> const Mat<double>& {
      Mat<double>& m = normalized[size_t(e)];
      if (m.size() == 0 && layer.outputs[size_t(e)].size() > 0) {
        m = layer.outputs[size_t(e)];
        for (int r = 0; r < m.rows; ++r) {
          double sq = 1e-12;
          for (int c = 0; c < m.cols; ++c) sq += m(r, c) * m(r, c);
          const double inv = 1.0 / std::sqrt(sq);
          for (int c = 0; c < m.cols; ++c) m(r, c) *= inv;
        }
      }
      return m;
    };
    for (int d = 0; d < kNumDescriptors; ++d) {
      const auto& group = map.assignment[size_t(d)];
      for (size_t i = 0; i < group.size(); ++i) {
        for (size_t j = i + 1; j < group.size(); ++j) {
          const int e1 = group[i], e2 = group[j];
          if (e1 >= n_experts || e2 >= n_experts) continue;
          const auto& t1 = layer.tokens[size_t(e1)];
          const auto& t2 = layer.tokens[size_t(e2)];
          size_t a = 0, b = 0;
          while (a < t1.size() && b < t2.size()) {
            if (t1[a] == t2[b]) {
              const Mat<double>& m1 = norm_of(e1);
              const Mat<double>& m2 = norm_of(e2);
              double dot = 0.0;
              for (int c = 0; c < m1.cols; ++c) dot += m1(int(a), c) * m2(int(b), c);
              acc += std::fabs(dot);
              ++count;
              ++a;
              ++b;
            } else if (t1[a] < t2[b]) {
              ++a;
            } else {
              ++b;
            }
          }
        }
      }
    }
  }
  return count > 0 ? acc / double(count) : 0.0;
}

namespace {

double eval_loss_value(const ModelState<double>& model,
                       const std::vector<BatchItem<double>>& batch, const LossConfig& lc,
                       const AnchorMap& map) {
  Tape<double> tape;
  // gate leaves must stay grad-enabled structurally; value-only evaluation
  // works with requires_grad=false everywhere
  const auto leaves = make_param_leaves(tape, const_cast<ModelState<double>&>(model), false);
  const BuiltLoss loss =
      build_total_loss(tape, model, leaves, batch, lc, map, /*capture_records=*/false);
  return tape.val(loss.total_node)(0, 0);
}

}  // namespace

GradCheckReport grad_check(ModelState<double>& model, std::vector<BatchItem<double>>& batch,
                           const LossConfig& lc, const AnchorMap& map, int min_params,
                           double eps, uint64_t seed) {
  // capture routing at the base point and freeze it for all evaluations
  {
    Tape<double> tape;
    const auto leaves = make_param_leaves(tape, model, false);
    const BuiltLoss loss = build_total_loss(tape, model, leaves, batch, lc, map, true);
    for (size_t i = 0; i < batch.size(); ++i) {
      batch[i].frozen_topk.clear();
      for (const auto& rec : loss.records[i]) batch[i].frozen_topk.push_back(rec.topk);
    }
  }

  // analytic gradients at the base point
  std::vector<Mat<double>> analytic;
  {
    Tape<double> tape;
    const auto leaves = make_param_leaves(tape, model, true);
    const BuiltLoss loss = build_total_loss(tape, model, leaves, batch, lc, map, false);
    tape.backward(loss.total_node);
    for (size_t i = 0; i < model.params.size(); ++i) {
      const Mat<double>& g = tape.grad(leaves[i]);
      if (g.size() > 0) {
        analytic.push_back(g);
      } else {
        analytic.emplace_back(model.params[int(i)].rows, model.params[int(i)].cols);
      }
    }
  }

  // collect parameter groups
  std::vector<std::string> group_names;
  for (const auto& e : model.params.entries) {
    bool found = false;
    for (const auto& g : group_names) found = found || g == e.group;
    if (!found) group_names.push_back(e.group);
  }

  GradCheckReport report;
  Rng rng = Rng::stream(seed, "grad-check");
  const int per_group = (min_params + int(group_names.size()) - 1) / int(group_names.size());
  for (const auto& gname : group_names) {
    GradCheckGroup gr;
    gr.name = gname;
    // flat candidate list (entry, index) for this group
    std::vector<std::pair<int, size_t>> candidates;
    for (size_t i = 0; i < model.params.size(); ++i) {
      if (model.params.entries[i].group != gname) continue;
      for (size_t j = 0; j < model.params[int(i)].size(); ++j) candidates.push_back({int(i), j});
    }
    const int n_check = std::min<int>(per_group, int(candidates.size()));
    for (int c = 0; c < n_check; ++c) {
      const auto [pi, fj] = candidates[size_t(rng.uniform_int(0, int64_t(candidates.size()) - 1))];
      double& theta = model.params[pi].d[fj];
      const double orig = theta;
      const double h = eps * std::max(1.0, std::fabs(orig));
      theta = orig + h;
      const double fp = eval_loss_value(model, batch, lc, map);
      theta = orig - h;
      const double fm = eval_loss_value(model, batch, lc, map);
      theta = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = analytic[size_t(pi)].d[fj];
      const double denom = std::max(1e-8, std::fabs(fd) + std::fabs(an));
      const double rel = std::fabs(fd - an) / denom;
      gr.max_rel_err = std::max(gr.max_rel_err, rel);
      gr.n_checked += 1;
    }
    report.worst = std::max(report.worst, gr.max_rel_err);
    report.groups.push_back(std::move(gr));
  }
  return report;
}

}  // namespace ame
