#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "ame/tensor.hpp"

namespace ame {

constexpr int kCheckpointVersion = 1;

// One named array in the container. Data lives in f32 or f64 according to
// dtype; exactly one of the two buffers is populated.
struct ArrayRecord {
  std::string name;
  std::vector<int64_t> shape;
  std::string dtype;  // "f32" | "f64"
  std::vector<float> f32;
  std::vector<double> f64;

  size_t count() const {
    size_t n = 1;
    for (const int64_t s : shape) n *= size_t(s);
    return n;
  }
};

// Directory layout: manifest.json (version, config, step, array index with
// byte offsets) + weights.bin (raw little-endian buffers concatenated in
// manifest order).
struct CheckpointData {
  int version = kCheckpointVersion;
  nlohmann::json config;
  int64_t step = 0;
  std::vector<ArrayRecord> arrays;

  const ArrayRecord* find(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return &a;
    return nullptr;
  }
};

void save_checkpoint(const std::string& dir, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& dir);

// Mat adapters.
template <class T>
ArrayRecord to_record(const std::string& name, const Mat<T>& m) {
  ArrayRecord r;
  r.name = name;
  r.shape = {m.rows, m.cols};
  if constexpr (std::is_same_v<T, float>) {
    r.dtype = "f32";
    r.f32.assign(m.d.begin(), m.d.end());
  } else {
    r.dtype = "f64";
    r.f64.assign(m.d.begin(), m.d.end());
  }
  return r;
}

template <class T>
Mat<T> record_to_mat(const ArrayRecord& r);

}  // namespace ame
