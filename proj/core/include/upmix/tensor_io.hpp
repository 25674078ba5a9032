#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace upmix {

/// Named float32 tensor as stored on disk.
struct TensorRecord {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

/// Container layout, all little-endian:
///
///   8 bytes   magic, e.g. "UPMXEX01" (examples) or "UPMXCK01" (checkpoints)
///   4 bytes   uint32 header length H
///   H bytes   UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "shape", "offset", "count"}]}
///   ...       float32 payload; `offset` and `count` are in elements
struct TensorFile {
  std::string meta_json;  // the "meta" object, serialized
  std::vector<TensorRecord> tensors;

  const TensorRecord& get(const std::string& name) const;
  const TensorRecord* find(const std::string& name) const;
};

class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kExampleMagic = "UPMXEX01";
inline constexpr const char* kCheckpointMagic = "UPMXCK01";

void write_tensor_file(const std::filesystem::path& path, const char* magic, const TensorFile& file);
TensorFile read_tensor_file(const std::filesystem::path& path, const char* magic);

}  // namespace upmix
