#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ame {

// ---- forecasting metrics ----

// y_hat[T+h] = x[T+h-m*ceil(h/m)]
std::vector<double> seasonal_naive_forecast(const std::vector<double>& context, int m,
                                            int horizon);

double mae(const std::vector<double>& pred, const std::vector<double>& target);
double rmse(const std::vector<double>& pred, const std::vector<double>& target);
// 2|p-y|/(|p|+|y|), zero-over-zero terms contribute 0
double smape(const std::vector<double>& pred, const std::vector<double>& target);
// scale = mean |x_t - x_{t-m}| over the in-sample window
double mase(const std::vector<double>& pred, const std::vector<double>& target,
            const std::vector<double>& insample, int m);

struct MetricSet {
  double mase = 0.0;
  double smape = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
};

MetricSet eval_metrics(const std::vector<double>& pred, const std::vector<double>& target,
                       const std::vector<double>& insample, int m);

// Per-metric ratio a/b; throws on nonpositive or non-finite ratios.
MetricSet metric_ratio(const MetricSet& a, const MetricSet& b);

// Geometric means across tasks.
MetricSet aggregate_normalized(const std::vector<MetricSet>& ratios);

struct TaskReport {
  std::string name;
  MetricSet raw;
  MetricSet baseline;
  MetricSet ratio;
  int n_series = 0;
};

struct MetricReport {
  std::vector<TaskReport> tasks;
  MetricSet aggregate;
};

std::string metric_report_json(const MetricReport& report);

// ---- routing analysis ----

// Reference top-1 assignments over a fixed probe set. One entry per tracked
// (series, token, layer) tuple, laid out layer-major per window so captures
// of identical topology align element-wise.
struct ProbeCapture {
  int n_layers = 0;
  int n_experts = 0;
  std::vector<int32_t> top1;
};

// Fraction of tuples whose top-1 expert matches the reference.
double routing_consistency(const ProbeCapture& reference, const ProbeCapture& current);

// Calinski-Harabasz index; labels must be in [0, c) with every cluster
// non-empty. Returns +inf when within-cluster dispersion vanishes.
double calinski_harabasz(const std::vector<std::vector<double>>& points,
                         const std::vector<int>& labels);

struct UsageStats {
  std::vector<std::vector<int64_t>> counts;  // [layer][expert] top-1 counts
  std::vector<double> entropy;               // per layer, normalized by log E
};

UsageStats expert_usage(const std::vector<std::vector<int>>& top1_per_layer, int n_experts);

}  // namespace ame
