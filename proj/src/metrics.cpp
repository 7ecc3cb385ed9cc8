#include "ame/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "ame/common.hpp"

namespace ame {

namespace {

void check_shapes(const std::vector<double>& pred, const std::vector<double>& target) {
  if (pred.size() != target.size() || pred.empty())
    fail(ErrorCode::shape_mismatch, "metrics: prediction/target shape mismatch");
}

}  // namespace

std::vector<double> seasonal_naive_forecast(const std::vector<double>& context, int m,
                                            int horizon) {
  if (m < 1 || int(context.size()) < m)
    fail(ErrorCode::invalid_argument, "seasonal_naive_forecast: context shorter than period");
  std::vector<double> out(static_cast<size_t>(horizon));
  const int64_t t = int64_t(context.size());
  for (int h = 1; h <= horizon; ++h) {
    const int64_t back = int64_t(m) * ((h + m - 1) / m);  // m * ceil(h/m)
    out[size_t(h - 1)] = context[size_t(t + h - back - 1)];
  }
  return out;
}

double mae(const std::vector<double>& pred, const std::vector<double>& target) {
  check_shapes(pred, target);
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) acc += std::fabs(pred[i] - target[i]);
  return acc / double(pred.size());
}

double rmse(const std::vector<double>& pred, const std::vector<double>& target) {
  check_shapes(pred, target);
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    acc += d * d;
  }
  return std::sqrt(acc / double(pred.size()));
}

double smape(const std::vector<double>& pred, const std::vector<double>& target) {
  check_shapes(pred, target);
  double acc = 0.0;
  for (size_t i = 0; i < pred.size(); ++i) {
    const double denom = std::fabs(pred[i]) + std::fabs(target[i]);
    if (denom > 0.0) acc += 2.0 * std::fabs(pred[i] - target[i]) / denom;
  }
  return acc / double(pred.size());
}

double mase(const std::vector<double>& pred, const std::vector<double>& target,
            const std::vector<double>& insample, int m) {
  check_shapes(pred, target);
  if (m < 1 || int(insample.size()) <= m)
    fail(ErrorCode::invalid_argument, "mase: in-sample window shorter than period+1");
  double scale = 0.0;
  for (size_t t = size_t(m); t < insample.size(); ++t)
    scale += std::fabs(insample[t] - insample[t - size_t(m)]);
  scale /= double(insample.size() - size_t(m));
  if (scale <= 0.0)
    fail(ErrorCode::degenerate, "mase: zero scale (constant seasonal in-sample)");
  return mae(pred, target) / scale;
}

MetricSet eval_metrics(const std::vector<double>& pred, const std::vector<double>& target,
                       const std::vector<double>& insample, int m) {
  MetricSet s;
  s.mase = mase(pred, target, insample, m);
  s.smape = smape(pred, target);
  s.mae = mae(pred, target);
  s.rmse = rmse(pred, target);
  return s;
}

namespace {

double checked_ratio(double a, double b, const char* name) {
  if (!(b > 0.0) || !std::isfinite(a) || !std::isfinite(b))
    fail(ErrorCode::degenerate, std::string("metric_ratio: nonpositive baseline for ") + name);
  const double r = a / b;
  if (!(r > 0.0) || !std::isfinite(r))
    fail(ErrorCode::degenerate, std::string("metric_ratio: nonpositive ratio for ") + name);
  return r;
}

}  // namespace

MetricSet metric_ratio(const MetricSet& a, const MetricSet& b) {
  MetricSet r;
  r.mase = checked_ratio(a.mase, b.mase, "mase");
  r.smape = checked_ratio(a.smape, b.smape, "smape");
  r.mae = checked_ratio(a.mae, b.mae, "mae");
  r.rmse = checked_ratio(a.rmse, b.rmse, "rmse");
  return r;
}

MetricSet aggregate_normalized(const std::vector<MetricSet>& ratios) {
  if (ratios.empty()) fail(ErrorCode::invalid_argument, "aggregate_normalized: no tasks");
  MetricSet acc;
  for (const auto& r : ratios) {
    for (const double v : {r.mase, r.smape, r.mae, r.rmse}) {
      if (!(v > 0.0) || !std::isfinite(v))
        fail(ErrorCode::degenerate, "aggregate_normalized: nonpositive ratio");
    }
    acc.mase += std::log(r.mase);
    acc.smape += std::log(r.smape);
    acc.mae += std::log(r.mae);
    acc.rmse += std::log(r.rmse);
  }
  const double n = double(ratios.size());
  return {std::exp(acc.mase / n), std::exp(acc.smape / n), std::exp(acc.mae / n),
          std::exp(acc.rmse / n)};
}

std::string metric_report_json(const MetricReport& report) {
  nlohmann::json j;
  auto set_to_json = [](const MetricSet& s) {
    return nlohmann::json{{"mase", s.mase}, {"smape", s.smape}, {"mae", s.mae}, {"rmse", s.rmse}};
  };
  j["tasks"] = nlohmann::json::array();
  for (const auto& t : report.tasks) {
    j["tasks"].push_back({{"name", t.name},
                          {"n_series", t.n_series},
                          {"raw", set_to_json(t.raw)},
                          {"seasonal_naive", set_to_json(t.baseline)},
                          {"ratio", set_to_json(t.ratio)}});
  }
  j["aggregate"] = set_to_json(report.aggregate);
  return j.dump(2);
}

double routing_consistency(const ProbeCapture& reference, const ProbeCapture& current) {
  if (reference.n_layers != current.n_layers || reference.n_experts != current.n_experts ||
      reference.top1.size() != current.top1.size())
    fail(ErrorCode::mismatch, "routing_consistency: probe topology mismatch");
  if (reference.top1.empty())
    fail(ErrorCode::invalid_argument, "routing_consistency: empty probe capture");
  size_t matches = 0;
  for (size_t i = 0; i < reference.top1.size(); ++i)
    if (reference.top1[i] == current.top1[i]) ++matches;
  return double(matches) / double(reference.top1.size());
}

double calinski_harabasz(const std::vector<std::vector<double>>& points,
                         const std::vector<int>& labels) {
  const size_t n = points.size();
  if (n == 0 || labels.size() != n)
    fail(ErrorCode::invalid_argument, "calinski_harabasz: points/labels mismatch");
  int c = 0;
  for (const int l : labels) {
    if (l < 0) fail(ErrorCode::invalid_argument, "calinski_harabasz: negative label");
    c = std::max(c, l + 1);
  }
  if (c < 2) fail(ErrorCode::invalid_argument, "calinski_harabasz: need at least 2 clusters");
  if (n <= size_t(c)) fail(ErrorCode::invalid_argument, "calinski_harabasz: need n > c");
  const size_t dim = points[0].size();

  std::vector<std::vector<double>> mu(size_t(c), std::vector<double>(dim, 0.0));
  std::vector<int64_t> cnt(size_t(c), 0);
  std::vector<double> global(dim, 0.0);
  for (size_t i = 0; i < n; ++i) {
    if (points[i].size() != dim)
      fail(ErrorCode::shape_mismatch, "calinski_harabasz: ragged points");
    cnt[size_t(labels[i])]++;
    for (size_t d = 0; d < dim; ++d) {
      mu[size_t(labels[i])][d] += points[i][d];
      global[d] += points[i][d];
    }
  }
  for (int j = 0; j < c; ++j) {
    if (cnt[size_t(j)] == 0)
      fail(ErrorCode::invalid_argument, "calinski_harabasz: empty cluster " + std::to_string(j));
    for (size_t d = 0; d < dim; ++d) mu[size_t(j)][d] /= double(cnt[size_t(j)]);
  }
  for (size_t d = 0; d < dim; ++d) global[d] /= double(n);

  double w = 0.0, b = 0.0;
  for (size_t i = 0; i < n; ++i) {
    for (size_t d = 0; d < dim; ++d) {
      const double dv = points[i][d] - mu[size_t(labels[i])][d];
      w += dv * dv;
    }
  }
  for (int j = 0; j < c; ++j) {
    for (size_t d = 0; d < dim; ++d) {
      const double dv = mu[size_t(j)][d] - global[d];
      b += double(cnt[size_t(j)]) * dv * dv;
    }
  }
  if (w < 1e-12) return std::numeric_limits<double>::infinity();
  return (b / double(c - 1)) / (w / double(n - size_t(c)));
}

UsageStats expert_usage(const std::vector<std::vector<int>>& top1_per_layer, int n_experts) {
  if (top1_per_layer.empty())
    fail(ErrorCode::invalid_argument, "expert_usage: no routing records");
  UsageStats s;
  s.counts.assign(top1_per_layer.size(), std::vector<int64_t>(size_t(n_experts), 0));
  s.entropy.assign(top1_per_layer.size(), 0.0);
  for (size_t l = 0; l < top1_per_layer.size(); ++l) {
    int64_t total = 0;
    for (const int e : top1_per_layer[l]) {
      s.counts[l][size_t(e)]++;
      ++total;
    }
    if (total == 0 || n_experts < 2) continue;
    double h = 0.0;
    for (const int64_t cth : s.counts[l]) {
      if (cth > 0) {
        const double p = double(cth) / double(total);
        h -= p * std::log(p);
      }
    }
    s.entropy[l] = h / std::log(double(n_experts));
  }
  return s;
}

}  // namespace ame
