#include "fmue/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

#include "fmue/errors.hpp"
#include "fmue/json_io.hpp"

namespace fmue {

namespace {

constexpr char kMagic[8] = {'F', 'M', 'U', 'E', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kDtypeFloat64 = 1;

template <class T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

class ByteCursor {
 public:
  ByteCursor(const std::string& data, const std::filesystem::path& path) : data_(data), path_(path) {}

  template <class T>
  T get() {
    need(sizeof(T));
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, data_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) throw IoError("truncated checkpoint: " + path_.string());
  }

  const std::string& data_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 0;
};

std::string shape_string(const std::vector<std::uint64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

NamedArray to_named(const Matrix& m) {
  NamedArray a;
  a.shape = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  a.data.assign(m.data(), m.data() + m.size());
  return a;
}

bool shape_matches(const NamedArray& a, const Matrix& m) {
  return a.shape.size() == 2 && a.shape[0] == static_cast<std::uint64_t>(m.rows()) &&
         a.shape[1] == static_cast<std::uint64_t>(m.cols());
}

void copy_into(const NamedArray& a, Matrix& m) {
  std::copy(a.data.begin(), a.data.end(), m.data());
}

}  // namespace

void write_archive(const std::filesystem::path& path, const CheckpointArchive& archive) {
  std::string buf(kMagic, sizeof(kMagic));
  put_le<std::uint64_t>(buf, archive.manifest_json.size());
  buf += archive.manifest_json;
  put_le<std::uint64_t>(buf, archive.arrays.size());
  for (const auto& [name, arr] : archive.arrays) {
    std::uint64_t count = 1;
    for (auto d : arr.shape) count *= d;
    if (count != arr.data.size()) throw ShapeError("array '" + name + "' data does not match its shape");
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put_le<std::uint8_t>(buf, kDtypeFloat64);
    put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(arr.shape.size()));
    for (auto d : arr.shape) put_le<std::uint64_t>(buf, d);
    for (double v : arr.data) put_le<double>(buf, v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

CheckpointArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteCursor cur(data, path);
  if (cur.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw IoError("not a checkpoint archive: " + path.string());
  }
  CheckpointArchive archive;
  archive.manifest_json = cur.bytes(cur.get<std::uint64_t>());
  const auto entries = cur.get<std::uint64_t>();
  for (std::uint64_t e = 0; e < entries; ++e) {
    std::string name = cur.bytes(cur.get<std::uint32_t>());
    if (cur.get<std::uint8_t>() != kDtypeFloat64) throw IoError("unsupported dtype for array '" + name + "'");
    NamedArray arr;
    const auto ndim = cur.get<std::uint32_t>();
    std::uint64_t count = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      arr.shape.push_back(cur.get<std::uint64_t>());
      count *= arr.shape.back();
    }
    if (count > data.size() / sizeof(double)) throw IoError("truncated checkpoint: " + path.string());
    arr.data.resize(count);
    for (auto& v : arr.data) v = cur.get<double>();
    archive.arrays.emplace(std::move(name), std::move(arr));
  }
  if (!cur.at_end()) throw IoError("trailing bytes in checkpoint: " + path.string());
  return archive;
}

void save_checkpoint(const ModelBundle& model, const std::filesystem::path& path) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["encoder"] = model.config;
  manifest["class_count"] = model.class_count;
  manifest["lora"] = model.lora ? nlohmann::json(*model.lora) : nlohmann::json(nullptr);
  manifest["trainable"] = model.trainable_names();

  CheckpointArchive archive;
  archive.manifest_json = manifest.dump();
  for (const Parameter* p : model.parameters()) archive.arrays.emplace(p->name, to_named(p->value));
  write_archive(path, archive);
}

void save_encoder(const ModelBundle& model, const std::filesystem::path& path) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["encoder"] = model.config;
  manifest["class_count"] = nullptr;
  manifest["lora"] = nullptr;

  CheckpointArchive archive;
  archive.manifest_json = manifest.dump();
  for (const Parameter* p : model.parameters()) {
    if (p->name.starts_with("encoder.") && !p->is_lora) archive.arrays.emplace(p->name, to_named(p->value));
  }
  write_archive(path, archive);
}

ModelBundle load_checkpoint(const std::filesystem::path& path) {
  const CheckpointArchive archive = read_archive(path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(archive.manifest_json);
    if (manifest.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw IoError("unsupported checkpoint format_version in " + path.string());
    }
    if (manifest.at("class_count").is_null()) {
      throw IoError(path.string() + " holds an encoder only; load it with load_pretrained_encoder");
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad checkpoint manifest in " + path.string() + ": " + e.what());
  }
  ModelBundle model = build_model(manifest.at("encoder").get<EncoderConfig>(), manifest.at("class_count").get<int>());
  if (!manifest.at("lora").is_null()) inject_lora(model, manifest.at("lora").get<LoRAConfig>());

  const auto trainable = manifest.value("trainable", std::vector<std::string>{});
  const std::set<std::string> trainable_set(trainable.begin(), trainable.end());
  for (Parameter* p : model.parameters()) {
    const auto it = archive.arrays.find(p->name);
    if (it == archive.arrays.end()) throw IoError("checkpoint is missing array '" + p->name + "'");
    if (!shape_matches(it->second, p->value)) {
      throw ShapeError("array '" + p->name + "' has shape " + shape_string(it->second.shape) + ", model expects [" +
                       std::to_string(p->value.rows()) + "," + std::to_string(p->value.cols()) + "]");
    }
    copy_into(it->second, p->value);
    p->trainable = trainable_set.count(p->name) > 0;
  }
  return model;
}

LoadReport load_pretrained_encoder(ModelBundle& model, const std::filesystem::path& path) {
  const CheckpointArchive archive = read_archive(path);
  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : model.parameters()) by_name.emplace(p->name, p);

  for (const auto& [name, arr] : archive.arrays) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) continue;
    if (!shape_matches(arr, it->second->value)) {
      throw ShapeError("pretrained array '" + name + "' has shape " + shape_string(arr.shape) + ", model expects [" +
                       std::to_string(it->second->value.rows()) + "," + std::to_string(it->second->value.cols()) +
                       "]");
    }
  }

  LoadReport report;
  for (const auto& [name, arr] : archive.arrays) {
    if (name.rfind("decoder.", 0) == 0) continue;
    const auto it = by_name.find(name);
    if (it == by_name.end()) {
      report.skipped.push_back(name);
      continue;
    }
    if (name.rfind("encoder.", 0) != 0 || it->second->is_lora) {
      report.retained.push_back(name);
      continue;
    }
    copy_into(arr, it->second->value);
    report.loaded.push_back(name);
  }
  return report;
}

}  // namespace fmue
