// Copyright 2026 The ropescope Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "ropescope/tensor_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ropescope/errors.hpp"

namespace ropescope {

namespace {

template <typename UInt>
void put_le(std::string& out, UInt value) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
  }
}

template <typename UInt>
void put_le(std::byte* out, UInt value) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    out[i] = static_cast<std::byte>((value >> (8 * i)) & 0xFF);
  }
}

template <typename UInt>
UInt get_le(const std::byte* in) {
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) {
    value |= static_cast<UInt>(std::to_integer<unsigned>(in[i])) << (8 * i);
  }
  return value;
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  const std::byte* take(std::size_t n, const std::string& what) {
    if (bytes_.size() - pos_ < n) {
      throw TruncatedRecordError("container truncated while reading " + what + " at offset " +
                                 std::to_string(pos_));
    }
    const auto* p = reinterpret_cast<const std::byte*>(bytes_.data() + pos_);
    pos_ += n;
    return p;
  }

  template <typename UInt>
  UInt read(const std::string& what) {
    return get_le<UInt>(take(sizeof(UInt), what));
  }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

DType dtype_from_code(std::uint8_t code, const std::string& tensor) {
  switch (code) {
    case 0:
      return DType::F32;
    case 1:
      return DType::F64;
    default:
      throw UnknownDtypeError("tensor " + tensor + " has unknown dtype code " +
                              std::to_string(code));
  }
}

std::string shape_string(const std::vector<std::uint64_t>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

std::size_t dtype_size(DType dtype) { return dtype == DType::F32 ? 4 : 8; }

std::string_view dtype_name(DType dtype) { return dtype == DType::F32 ? "f32" : "f64"; }

DType parse_dtype(std::string_view name) {
  if (name == "f32") return DType::F32;
  if (name == "f64") return DType::F64;
  throw UnknownDtypeError("unknown dtype '" + std::string(name) + "'");
}

std::uint64_t Tensor::element_count() const {
  std::uint64_t count = 1;
  for (std::uint64_t d : shape) count *= d;
  return count;
}

namespace detail {

void store_element(std::byte* dst, DType dtype, double value) {
  if (dtype == DType::F32) {
    put_le(dst, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
  } else {
    put_le(dst, std::bit_cast<std::uint64_t>(value));
  }
}

double load_element(const std::byte* src, DType dtype) {
  if (dtype == DType::F32) return std::bit_cast<float>(get_le<std::uint32_t>(src));
  return std::bit_cast<double>(get_le<std::uint64_t>(src));
}

}  // namespace detail

std::string encode_container(const std::vector<Tensor>& tensors) {
  std::string out(kContainerMagic, sizeof(kContainerMagic));
  put_le(out, kContainerVersion);
  for (const Tensor& t : tensors) {
    if (t.shape.size() > std::numeric_limits<std::uint8_t>::max()) {
      throw std::invalid_argument("tensor " + t.name + " rank exceeds 255");
    }
    if (t.data.size() != t.element_count() * dtype_size(t.dtype)) {
      throw std::invalid_argument("tensor " + t.name + " data size does not match its shape");
    }
    put_le(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    out.push_back(static_cast<char>(t.dtype));
    out.push_back(static_cast<char>(t.shape.size()));
    for (std::uint64_t d : t.shape) put_le(out, d);
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size());
  }
  return out;
}

std::vector<Tensor> decode_container(std::string_view bytes) {
  if (bytes.size() < sizeof(kContainerMagic) ||
      std::memcmp(bytes.data(), kContainerMagic, sizeof(kContainerMagic)) != 0) {
    throw BadMagicError("not an RSTN container (bad magic)");
  }
  Reader reader(bytes.substr(sizeof(kContainerMagic)));
  const auto version = reader.read<std::uint32_t>("version");
  if (version != kContainerVersion) {
    throw UnsupportedVersionError("unsupported RSTN version " + std::to_string(version));
  }
  std::vector<Tensor> tensors;
  std::set<std::string> names;
  while (!reader.done()) {
    Tensor t;
    const auto name_len = reader.read<std::uint32_t>("name length");
    const std::byte* name = reader.take(name_len, "tensor name");
    t.name.assign(reinterpret_cast<const char*>(name), name_len);
    t.dtype = dtype_from_code(reader.read<std::uint8_t>("dtype of " + t.name), t.name);
    const auto rank = reader.read<std::uint8_t>("rank of " + t.name);
    std::uint64_t count = 1;
    for (std::uint8_t i = 0; i < rank; ++i) {
      const auto dim = reader.read<std::uint64_t>("dims of " + t.name);
      if (dim != 0 && count > std::numeric_limits<std::uint64_t>::max() / 8 / dim) {
        throw ShapeMismatchError("tensor " + t.name + " shape overflows");
      }
      count *= dim;
      t.shape.push_back(dim);
    }
    const std::uint64_t nbytes = count * dtype_size(t.dtype);
    if (nbytes > std::numeric_limits<std::size_t>::max()) {
      throw ShapeMismatchError("tensor " + t.name + " is too large");
    }
    const std::byte* data = reader.take(static_cast<std::size_t>(nbytes), "data of " + t.name);
    t.data.assign(data, data + nbytes);
    if (!names.insert(t.name).second) throw FormatError("duplicate tensor name " + t.name);
    tensors.push_back(std::move(t));
  }
  return tensors;
}

void write_container(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
  const std::string bytes = encode_container(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

std::vector<Tensor> read_container(const std::filesystem::path& path) {
  return decode_container(slurp(path));
}

const Tensor* try_find_tensor(const std::vector<Tensor>& tensors, std::string_view name) {
  for (const Tensor& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const Tensor& find_tensor(const std::vector<Tensor>& tensors, std::string_view name) {
  if (const Tensor* t = try_find_tensor(tensors, name)) return *t;
  throw ShapeMismatchError("missing tensor " + std::string(name));
}

std::string_view layout_name(RotaryLayout layout) {
  return layout == RotaryLayout::Interleaved ? "interleaved" : "half_split";
}

RotaryLayout parse_layout(std::string_view name) {
  if (name == "interleaved") return RotaryLayout::Interleaved;
  if (name == "half_split") return RotaryLayout::HalfSplit;
  throw LayoutError("unknown rotary layout '" + std::string(name) + "'");
}

std::string manifest_to_json(const Manifest& manifest) {
  nlohmann::ordered_json doc;
  doc["format"] = "RSTN";
  doc["version"] = kContainerVersion;
  doc["container"] = manifest.container;
  doc["layout"] = layout_name(manifest.layout);
  if (manifest.head_dim) doc["head_dim"] = *manifest.head_dim;
  if (manifest.rope_base) doc["rope_base"] = *manifest.rope_base;
  if (manifest.n_layers) doc["n_layers"] = *manifest.n_layers;
  if (manifest.n_heads) doc["n_heads"] = *manifest.n_heads;
  doc["tensors"] = nlohmann::ordered_json::array();
  for (const TensorInfo& info : manifest.tensors) {
    doc["tensors"].push_back(
        {{"name", info.name}, {"dtype", dtype_name(info.dtype)}, {"shape", info.shape}});
  }
  return doc.dump(2) + "\n";
}

Manifest manifest_from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  try {
    Manifest m;
    if (doc.value("format", std::string("RSTN")) != "RSTN") {
      throw FormatError("manifest format is not RSTN");
    }
    m.container = doc.at("container").get<std::string>();
    if (!doc.contains("layout") || !doc["layout"].is_string()) {
      throw LayoutError("manifest has no rotary layout flag");
    }
    m.layout = parse_layout(doc["layout"].get<std::string>());
    if (doc.contains("head_dim")) m.head_dim = doc["head_dim"].get<int>();
    if (doc.contains("rope_base")) m.rope_base = doc["rope_base"].get<double>();
    if (doc.contains("n_layers")) m.n_layers = doc["n_layers"].get<int>();
    if (doc.contains("n_heads")) m.n_heads = doc["n_heads"].get<int>();
    for (const auto& entry : doc.value("tensors", nlohmann::json::array())) {
      m.tensors.push_back({entry.at("name").get<std::string>(),
                           parse_dtype(entry.at("dtype").get<std::string>()),
                           entry.at("shape").get<std::vector<std::uint64_t>>()});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  }
}

Manifest read_manifest(const std::filesystem::path& path) { return manifest_from_json(slurp(path)); }

std::filesystem::path write_bundle(const std::filesystem::path& dir, const std::string& stem,
                                   const std::vector<Tensor>& tensors, Manifest manifest) {
  std::filesystem::create_directories(dir);
  manifest.container = stem + ".rstn";
  manifest.tensors.clear();
  for (const Tensor& t : tensors) manifest.tensors.push_back({t.name, t.dtype, t.shape});
  write_container(dir / manifest.container, tensors);
  const std::filesystem::path manifest_path = dir / (stem + ".json");
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + manifest_path.string());
  out << manifest_to_json(manifest);
  return manifest_path;
}

Bundle read_bundle(const std::filesystem::path& manifest_path) {
  Bundle bundle;
  bundle.manifest = read_manifest(manifest_path);
  bundle.tensors = read_container(manifest_path.parent_path() / bundle.manifest.container);
  for (const TensorInfo& info : bundle.manifest.tensors) {
    const Tensor& t = find_tensor(bundle.tensors, info.name);
    if (t.dtype != info.dtype || t.shape != info.shape) {
      throw ShapeMismatchError("tensor " + info.name + " is " +
                               std::string(dtype_name(t.dtype)) + shape_string(t.shape) +
                               " but the manifest declares " +
                               std::string(dtype_name(info.dtype)) + shape_string(info.shape));
    }
  }
  return bundle;
}

}  // namespace ropescope
