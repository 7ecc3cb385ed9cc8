#include "ame/checkpoint.hpp"

#include <filesystem>
#include <fstream>

#include "ame/common.hpp"

namespace ame {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

size_t dtype_bytes(const std::string& dtype) {
  if (dtype == "f32") return 4;
  if (dtype == "f64") return 8;
  fail(ErrorCode::parse, "checkpoint: unknown dtype " + dtype);
}

}  // namespace

void save_checkpoint(const std::string& dir, const CheckpointData& data) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  json manifest;
  manifest["format_version"] = data.version;
  manifest["config"] = data.config;
  manifest["step"] = data.step;
  json index = json::array();

  const std::string bin_path = (fs::path(dir) / "weights.bin").string();
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) fail(ErrorCode::io, "checkpoint: cannot write " + bin_path);
  int64_t offset = 0;
  for (const auto& a : data.arrays) {
    const size_t bytes = a.count() * dtype_bytes(a.dtype);
    index.push_back({{"name", a.name},
                     {"shape", a.shape},
                     {"dtype", a.dtype},
                     {"offset", offset},
                     {"nbytes", bytes}});
    if (a.dtype == "f32") {
      if (a.f32.size() != a.count())
        fail(ErrorCode::shape_mismatch, "checkpoint: buffer size mismatch for " + a.name);
      bin.write(reinterpret_cast<const char*>(a.f32.data()), std::streamsize(bytes));
    } else {
      if (a.f64.size() != a.count())
        fail(ErrorCode::shape_mismatch, "checkpoint: buffer size mismatch for " + a.name);
      bin.write(reinterpret_cast<const char*>(a.f64.data()), std::streamsize(bytes));
    }
    offset += int64_t(bytes);
  }
  bin.close();
  manifest["arrays"] = index;

  const std::string man_path = (fs::path(dir) / "manifest.json").string();
  std::ofstream man(man_path);
  if (!man) fail(ErrorCode::io, "checkpoint: cannot write " + man_path);
  man << manifest.dump(2) << "\n";
}

CheckpointData load_checkpoint(const std::string& dir) {
  const std::string man_path = (fs::path(dir) / "manifest.json").string();
  std::ifstream man(man_path);
  if (!man) fail(ErrorCode::io, "checkpoint: cannot open " + man_path);
  json manifest = json::parse(man, nullptr, false);
  if (manifest.is_discarded()) fail(ErrorCode::parse, "checkpoint: invalid manifest json");

  CheckpointData data;
  try {
    data.version = manifest.at("format_version").get<int>();
    if (data.version != kCheckpointVersion)
      fail(ErrorCode::version, "checkpoint: unsupported format version " +
                                   std::to_string(data.version));
    data.config = manifest.at("config");
    data.step = manifest.at("step").get<int64_t>();
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("checkpoint: manifest missing field: ") + e.what());
  }

  const std::string bin_path = (fs::path(dir) / "weights.bin").string();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) fail(ErrorCode::io, "checkpoint: cannot open " + bin_path);

  try {
    for (const auto& entry : manifest.at("arrays")) {
      ArrayRecord a;
      a.name = entry.at("name").get<std::string>();
      a.shape = entry.at("shape").get<std::vector<int64_t>>();
      a.dtype = entry.at("dtype").get<std::string>();
      const int64_t offset = entry.at("offset").get<int64_t>();
      const size_t nbytes = entry.at("nbytes").get<size_t>();
      if (nbytes != a.count() * dtype_bytes(a.dtype))
        fail(ErrorCode::shape_mismatch, "checkpoint: inconsistent byte count for " + a.name);
      bin.seekg(offset);
      if (a.dtype == "f32") {
        a.f32.resize(a.count());
        bin.read(reinterpret_cast<char*>(a.f32.data()), std::streamsize(nbytes));
      } else {
        a.f64.resize(a.count());
        bin.read(reinterpret_cast<char*>(a.f64.data()), std::streamsize(nbytes));
      }
      if (!bin) fail(ErrorCode::io, "checkpoint: truncated weights.bin at " + a.name);
      data.arrays.push_back(std::move(a));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::parse, std::string("checkpoint: bad array index: ") + e.what());
  }
  return data;
}

template <class T>
Mat<T> record_to_mat(const ArrayRecord& r) {
  if (r.shape.size() != 2)
    fail(ErrorCode::shape_mismatch, "checkpoint: array " + r.name + " is not 2-d");
  Mat<T> m(int(r.shape[0]), int(r.shape[1]));
  if (r.dtype == "f32") {
    if (r.f32.size() != m.size())
      fail(ErrorCode::shape_mismatch, "checkpoint: size mismatch for " + r.name);
    for (size_t i = 0; i < m.size(); ++i) m.d[i] = T(r.f32[i]);
  } else {
    if (r.f64.size() != m.size())
      fail(ErrorCode::shape_mismatch, "checkpoint: size mismatch for " + r.name);
    for (size_t i = 0; i < m.size(); ++i) m.d[i] = T(r.f64[i]);
  }
  return m;
}

template Mat<float> record_to_mat<float>(const ArrayRecord&);
template Mat<double> record_to_mat<double>(const ArrayRecord&);

}  // namespace ame
