// Copyright (c) 2026 The kwskit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef KWS_CONTAINER_H_
#define KWS_CONTAINER_H_

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "kws/common.h"
#include "kws/model.h"

namespace kws {

// Single-file model format, little-endian throughout:
//   "KWSF" | u32 version | u64 metadata length | metadata JSON (UTF-8)
//   u32 tensor count, then per tensor:
//     u32 name length | name | u8 dtype (0 f32, 1 i8) | u32 rank |
//     u64 dims[rank] | data | f32 scale (i8 only)
inline constexpr char kContainerMagic[4] = {'K', 'W', 'S', 'F'};
inline constexpr uint32_t kContainerVersion = 1;

enum class DType : uint8_t { kF32 = 0, kI8 = 1 };

struct ContainerTensor {
  std::string name;
  DType dtype = DType::kF32;
  std::vector<int64_t> shape;
  std::vector<float> f32;
  std::vector<int8_t> i8;
  float scale = 1.0f;

  size_t numel() const { return nn::Tensor<float>::NumElements(shape); }
};

struct Container {
  uint32_t version = kContainerVersion;
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<ContainerTensor> tensors;

  const ContainerTensor* Find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

namespace internal {

class ByteWriter {
 public:
  void U8(uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void U32(uint32_t v) {
    for (int i = 0; i < 4; ++i) U8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void U64(uint64_t v) {
    for (int i = 0; i < 8; ++i) U8(static_cast<uint8_t>(v >> (8 * i)));
  }
  void F32(float v) { U32(std::bit_cast<uint32_t>(v)); }
  void Bytes(const std::string& s) { out_ += s; }
  std::string Take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(const std::string& bytes, std::string name)
      : bytes_(bytes), name_(std::move(name)) {}

  uint8_t U8() {
    Need(1);
    return static_cast<uint8_t>(bytes_[pos_++]);
  }
  uint32_t U32() {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(U8()) << (8 * i);
    return v;
  }
  uint64_t U64() {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(U8()) << (8 * i);
    return v;
  }
  float F32() { return std::bit_cast<float>(U32()); }
  std::string Bytes(uint64_t n) {
    Need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  [[noreturn]] void Fail(const std::string& what) const {
    throw Error(ErrorCode::kBadContainer, name_ + ": " + what);
  }

 private:
  void Need(uint64_t n) const {
    if (n > bytes_.size() - pos_) Fail("truncated");
  }

  const std::string& bytes_;
  std::string name_;
  size_t pos_ = 0;
};

}  // namespace internal

inline std::string EncodeContainer(const Container& c) {
  internal::ByteWriter w;
  w.Bytes(std::string(kContainerMagic, 4));
  w.U32(c.version);
  const std::string meta = c.metadata.dump();
  w.U64(meta.size());
  w.Bytes(meta);
  w.U32(static_cast<uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    w.U32(static_cast<uint32_t>(t.name.size()));
    w.Bytes(t.name);
    w.U8(static_cast<uint8_t>(t.dtype));
    w.U32(static_cast<uint32_t>(t.shape.size()));
    for (int64_t d : t.shape) w.U64(static_cast<uint64_t>(d));
    if (t.dtype == DType::kF32) {
      for (float v : t.f32) w.F32(v);
    } else {
      for (int8_t v : t.i8) w.U8(static_cast<uint8_t>(v));
      w.F32(t.scale);
    }
  }
  return w.Take();
}

inline Container DecodeContainer(const std::string& bytes,
                                 const std::string& name = "container") {
  internal::ByteReader r(bytes, name);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kContainerMagic, 4) != 0) {
    r.Fail("not a KWSF file");
  }
  r.Bytes(4);
  Container c;
  c.version = r.U32();
  if (c.version != kContainerVersion) {
    r.Fail("unsupported format_version " + std::to_string(c.version) +
           " (this build reads " + std::to_string(kContainerVersion) + ")");
  }
  const uint64_t meta_len = r.U64();
  try {
    c.metadata = nlohmann::json::parse(r.Bytes(meta_len));
  } catch (const nlohmann::json::exception& e) {
    r.Fail(std::string("metadata: ") + e.what());
  }
  const uint32_t count = r.U32();
  for (uint32_t i = 0; i < count; ++i) {
    ContainerTensor t;
    t.name = r.Bytes(r.U32());
    const uint8_t dtype = r.U8();
    if (dtype > 1) r.Fail("tensor " + t.name + ": unknown dtype");
    t.dtype = static_cast<DType>(dtype);
    const uint32_t rank = r.U32();
    uint64_t numel = 1;
    for (uint32_t k = 0; k < rank; ++k) {
      const uint64_t d = r.U64();
      if (d > (uint64_t{1} << 40)) r.Fail("tensor " + t.name + ": bad dim");
      numel *= d;
      t.shape.push_back(static_cast<int64_t>(d));
    }
    if (numel > bytes.size()) r.Fail("tensor " + t.name + ": truncated");
    if (t.dtype == DType::kF32) {
      t.f32.resize(numel);
      for (auto& v : t.f32) v = r.F32();
    } else {
      t.i8.resize(numel);
      for (auto& v : t.i8) v = static_cast<int8_t>(r.U8());
      t.scale = r.F32();
    }
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) r.Fail("trailing bytes");
  return c;
}

inline void WriteBytes(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path);
}

inline std::string ReadBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void SaveContainer(const std::string& path, const Container& c) {
  WriteBytes(path, EncodeContainer(c));
}

inline Container LoadContainer(const std::string& path) {
  return DecodeContainer(ReadBytes(path), path);
}

// A float model plus the deployment metadata stored next to it.
struct ModelFile {
  KwsModel<float> model;
  std::vector<double> thresholds;  // one per keyword
  nlohmann::json extra = nlohmann::json::object();
};

inline ContainerTensor F32Tensor(const std::string& name,
                                 const nn::Tensor<float>& t) {
  ContainerTensor ct;
  ct.name = name;
  ct.shape = t.shape;
  ct.f32.assign(t.data.begin(), t.data.end());
  return ct;
}

inline nlohmann::json ModelMetadata(const KwsModel<float>& model,
                                    const std::vector<double>& thresholds,
                                    bool quantized) {
  nlohmann::json meta;
  meta["model"] = model.config;
  meta["cmvn"] = model.cmvn;
  meta["thresholds"] = thresholds;
  meta["quantized"] = quantized;
  return meta;
}

inline Container ModelToContainer(const ModelFile& file) {
  Container c;
  std::vector<double> thresholds = file.thresholds;
  if (thresholds.empty()) {
    thresholds.assign(file.model.config.num_keywords, 0.5);
  }
  c.metadata = ModelMetadata(file.model, thresholds, false);
  c.metadata["extra"] = file.extra;
  for (const auto& p : file.model.params) {
    c.tensors.push_back(F32Tensor(p.name, p.value()));
  }
  return c;
}

// Tensors under this prefix carry optimizer state in training checkpoints and
// are not model parameters.
inline constexpr std::string_view kOptimizerPrefix = "optim.";

// Rebuilds the architecture from metadata and fills every parameter; names
// and shapes must match the definition exactly. i8 tensors are loaded as
// their integer codes.
inline KwsModel<float> ModelFromContainer(const Container& c) {
  KwsModel<float> model;
  try {
    model = BuildModel<float>(c.metadata.at("model").get<ModelConfig>(),
                              c.metadata.at("cmvn").get<CmvnStats>());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadContainer,
                std::string("model metadata: ") + e.what());
  }
  size_t found = 0;
  for (const auto& t : c.tensors) {
    if (t.name.starts_with(kOptimizerPrefix)) continue;
    ++found;
    if (!model.has_param(t.name)) {
      throw Error(ErrorCode::kBadContainer, "unexpected tensor " + t.name);
    }
    auto& value = model.param(t.name).value();
    if (value.shape != t.shape) {
      throw Error(ErrorCode::kBadContainer,
                  "tensor " + t.name + " has shape " + nn::ShapeString(t.shape) +
                      ", model expects " + nn::ShapeString(value.shape));
    }
    if (t.dtype == DType::kF32) {
      value.data.assign(t.f32.begin(), t.f32.end());
    } else {
      value.data.assign(t.i8.begin(), t.i8.end());
    }
  }
  if (found != model.params.size()) {
    throw Error(ErrorCode::kBadContainer,
                "expected " + std::to_string(model.params.size()) +
                    " tensors, found " + std::to_string(found));
  }
  return model;
}

inline ModelFile ModelFileFromContainer(const Container& c) {
  ModelFile file;
  file.model = ModelFromContainer(c);
  file.thresholds = c.metadata.value("thresholds", std::vector<double>{});
  if (file.thresholds.size() !=
      static_cast<size_t>(file.model.config.num_keywords)) {
    throw Error(ErrorCode::kBadContainer, "threshold count vs keywords");
  }
  file.extra = c.metadata.value("extra", nlohmann::json::object());
  return file;
}

inline void SaveModel(const std::string& path, const ModelFile& file) {
  SaveContainer(path, ModelToContainer(file));
}

inline ModelFile LoadModel(const std::string& path) {
  const Container c = LoadContainer(path);
  if (c.metadata.value("quantized", false)) {
    throw Error(ErrorCode::kBadContainer,
                path + " holds an int8 model; use the int8 loader");
  }
  return ModelFileFromContainer(c);
}

}  // namespace kws

#endif  // KWS_CONTAINER_H_
