#include "upmix/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

namespace upmix {

const TensorRecord* TensorFile::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const TensorRecord& TensorFile::get(const std::string& name) const {
  if (const auto* t = find(name)) return *t;
  throw FormatError("tensor '" + name + "' not found");
}

void write_tensor_file(const std::filesystem::path& path, const char* magic, const TensorFile& file) {
  nlohmann::json header;
  header["meta"] = file.meta_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(file.meta_json);
  auto& list = header["tensors"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : file.tensors) {
    std::size_t expected = 1;
    for (int d : t.shape) expected *= static_cast<std::size_t>(d);
    if (expected != t.data.size()) throw FormatError("tensor '" + t.name + "' shape does not match its data");
    list.push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.data.size()}});
    offset += t.data.size();
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(magic, 8);
  const auto len = static_cast<std::uint32_t>(text.size());
  unsigned char len_bytes[4] = {static_cast<unsigned char>(len & 0xFF), static_cast<unsigned char>((len >> 8) & 0xFF),
                                static_cast<unsigned char>((len >> 16) & 0xFF),
                                static_cast<unsigned char>((len >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(len_bytes), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  static_assert(std::endian::native == std::endian::little);
  for (const auto& t : file.tensors) {
    out.write(reinterpret_cast<const char*>(t.data.data()), static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

TensorFile read_tensor_file(const std::filesystem::path& path, const char* magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), magic, 8) != 0) {
    throw FormatError(path.string() + ": bad magic (expected " + std::string(magic, 8) + ")");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + 8);
  const std::uint32_t len = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  if (12 + static_cast<std::size_t>(len) > bytes.size()) throw FormatError(path.string() + ": truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": header is not valid JSON: " + e.what());
  }
  const std::size_t payload = 12 + static_cast<std::size_t>(len);
  const std::size_t floats = (bytes.size() - payload) / sizeof(float);

  TensorFile file;
  file.meta_json = header.value("meta", nlohmann::json::object()).dump();
  for (const auto& t : header.at("tensors")) {
    TensorRecord rec;
    rec.name = t.at("name").get<std::string>();
    rec.shape = t.at("shape").get<std::vector<int>>();
    const auto offset = t.at("offset").get<std::size_t>();
    const auto count = t.at("count").get<std::size_t>();
    if (offset + count > floats) throw FormatError(path.string() + ": tensor '" + rec.name + "' exceeds payload");
    rec.data.resize(count);
    std::memcpy(rec.data.data(), bytes.data() + payload + offset * sizeof(float), count * sizeof(float));
    file.tensors.push_back(std::move(rec));
  }
  return file;
}

}  // namespace upmix
