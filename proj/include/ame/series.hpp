#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ame {

// One (possibly multivariate) time series. All variates share the same time
// index and therefore the same length. Values are guaranteed finite once a
// Series has passed validate().
struct Series {
  std::string id;
  std::string freq;  // informational tag; synthetic series encode "m=<period>"
  std::vector<std::vector<double>> variates;
  std::string label;  // optional regime label ("" when absent)

  size_t length() const { return variates.empty() ? 0 : variates[0].size(); }
  size_t n_variates() const { return variates.size(); }
  void validate() const;
};

using Dataset = std::vector<Series>;

// A context+horizon slice of a source series. context[v] has length t_ctx,
// horizon[v] length t_hor, and the horizon follows the context contiguously.
struct Window {
  std::vector<std::vector<double>> context;
  std::vector<std::vector<double>> horizon;
  std::string source_id;
  int64_t offset = 0;

  size_t t_ctx() const { return context.empty() ? 0 : context[0].size(); }
  size_t t_hor() const { return horizon.empty() ? 0 : horizon[0].size(); }
  size_t n_variates() const { return context.size(); }
};

// Per-variate standardization statistics (context mean, floored std).
struct NormStats {
  std::vector<double> mean;
  std::vector<double> scale;
};

constexpr double kScaleFloor = 1e-5;

struct Patch {
  std::vector<double> values;  // length P, zero padded at the tail
  std::vector<bool> valid;     // false on padded slots
};

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& ds, const std::string& path);

// Sliding windows at offsets 0, stride, 2*stride, ... while the full
// context+horizon span fits. Returns an empty list when the series is too
// short.
std::vector<Window> make_windows(const Series& s, int t_ctx, int t_hor, int stride);

// Extract a single window at the given offset (throws if out of bounds).
Window window_at(const Series& s, int64_t offset, int t_ctx, int t_hor);

// Standardize per variate with context-only statistics; the horizon is
// transformed with the same stats so no future information leaks into the
// normalization.
std::pair<Window, NormStats> standardize_window(const Window& w);
std::vector<double> destandardize(const std::vector<double>& values, double mean, double scale);

std::vector<Patch> patchify(const std::vector<double>& values, int patch_len);

}  // namespace ame
