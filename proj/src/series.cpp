#include "ame/series.hpp"

#include <cmath>
#include <limits>
#include <fstream>
#include <json.hpp>

#include "ame/common.hpp"

namespace ame {

using nlohmann::json;

void Series::validate() const {
  if (variates.empty()) fail(ErrorCode::invalid_argument, "series '" + id + "': no variates");
  const size_t len = variates[0].size();
  if (len < 1) fail(ErrorCode::invalid_argument, "series '" + id + "': empty variate");
  for (const auto& v : variates) {
    if (v.size() != len)
      fail(ErrorCode::invalid_argument, "series '" + id + "': variate length mismatch");
    for (const double x : v) {
      if (!std::isfinite(x))
        fail(ErrorCode::invalid_argument, "series '" + id + "': non-finite value");
    }
  }
}

namespace {

// Numbers parse directly; JSON null is the conventional encoding for a
// missing observation and maps to NaN, which Series::validate then rejects
// with the series id.
std::vector<double> parse_values(const json& arr) {
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (v.is_null()) {
      out.push_back(std::numeric_limits<double>::quiet_NaN());
    } else if (v.is_number()) {
      out.push_back(v.get<double>());
    } else {
      throw json::type_error::create(302, "value entry is not a number", &v);
    }
  }
  return out;
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::io, "cannot open dataset file: " + path);
  Dataset ds;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      fail(ErrorCode::parse, path + ":" + std::to_string(line_no) + ": invalid JSON");
    Series s;
    try {
      s.id = j.at("id").get<std::string>();
      s.freq = j.value("freq", "");
      s.label = j.value("label", "");
      if (j.contains("variates")) {
        for (const auto& var : j.at("variates")) s.variates.push_back(parse_values(var));
      } else {
        s.variates.push_back(parse_values(j.at("values")));
      }
    } catch (const json::exception& e) {
      fail(ErrorCode::parse, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    s.validate();
    ds.push_back(std::move(s));
  }
  if (ds.empty()) fail(ErrorCode::parse, path + ": empty dataset file");
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::io, "cannot write dataset file: " + path);
  for (const auto& s : ds) {
    json j;
    j["id"] = s.id;
    j["freq"] = s.freq;
    if (s.variates.size() == 1) {
      j["values"] = s.variates[0];
    } else {
      j["variates"] = s.variates;
    }
    if (!s.label.empty()) j["label"] = s.label;
    out << j.dump() << "\n";
  }
}

std::vector<Window> make_windows(const Series& s, int t_ctx, int t_hor, int stride) {
  if (t_ctx < 2 || t_hor < 1 || stride < 1)
    fail(ErrorCode::invalid_argument, "make_windows: need t_ctx >= 2, t_hor >= 1, stride >= 1");
  std::vector<Window> out;
  const int64_t len = int64_t(s.length());
  for (int64_t off = 0; off + t_ctx + t_hor <= len; off += stride) {
    out.push_back(window_at(s, off, t_ctx, t_hor));
  }
  return out;
}

Window window_at(const Series& s, int64_t offset, int t_ctx, int t_hor) {
  if (offset < 0 || offset + t_ctx + t_hor > int64_t(s.length()))
    fail(ErrorCode::invalid_argument, "window_at: slice out of bounds for '" + s.id + "'");
  Window w;
  w.source_id = s.id;
  w.offset = offset;
  for (const auto& v : s.variates) {
    w.context.emplace_back(v.begin() + offset, v.begin() + offset + t_ctx);
    w.horizon.emplace_back(v.begin() + offset + t_ctx, v.begin() + offset + t_ctx + t_hor);
  }
  return w;
}

std::pair<Window, NormStats> standardize_window(const Window& w) {
  Window out = w;
  NormStats stats;
  for (size_t v = 0; v < w.context.size(); ++v) {
    const auto& ctx = w.context[v];
    double mean = 0.0;
    for (const double x : ctx) mean += x;
    mean /= double(ctx.size());
    double var = 0.0;
    for (const double x : ctx) var += (x - mean) * (x - mean);
    var /= double(ctx.size());
    const double scale = std::max(std::sqrt(var), kScaleFloor);
    stats.mean.push_back(mean);
    stats.scale.push_back(scale);
    for (auto& x : out.context[v]) x = (x - mean) / scale;
    for (auto& x : out.horizon[v]) x = (x - mean) / scale;
  }
  return {std::move(out), std::move(stats)};
}

std::vector<double> destandardize(const std::vector<double>& values, double mean, double scale) {
  std::vector<double> out(values.size());
  for (size_t i = 0; i < values.size(); ++i) out[i] = values[i] * scale + mean;
  return out;
}

std::vector<Patch> patchify(const std::vector<double>& values, int patch_len) {
  if (patch_len < 1) fail(ErrorCode::invalid_argument, "patchify: patch_len must be >= 1");
  const size_t t = values.size();
  const size_t n = (t + size_t(patch_len) - 1) / size_t(patch_len);
  std::vector<Patch> out(n);
  for (size_t i = 0; i < n; ++i) {
    out[i].values.assign(size_t(patch_len), 0.0);
    out[i].valid.assign(size_t(patch_len), false);
    for (size_t j = 0; j < size_t(patch_len); ++j) {
      const size_t idx = i * size_t(patch_len) + j;
      if (idx < t) {
        out[i].values[j] = values[idx];
        out[i].valid[j] = true;
      }
    }
  }
  return out;
}

}  // namespace ame
