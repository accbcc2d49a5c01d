// Copyright 2026 The resasr authors.
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

#include "resasr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "resasr/common.hpp"

namespace resasr {

namespace {

constexpr char kMagic[4] = {'R', 'N', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<uint32_t>(v));
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out += s;
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path)
      : bytes_(bytes), path_(path) {}

  uint32_t u32() {
    need(4);
    const auto* p = reinterpret_cast<const unsigned char*>(bytes_.data() + off_);
    off_ += 4;
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) |
           (static_cast<uint32_t>(p[3]) << 24);
  }

  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(bytes_[off_++]);
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string str(uint32_t len) {
    need(len);
    std::string s = bytes_.substr(off_, len);
    off_ += len;
    return s;
  }

  bool at_end() const { return off_ == bytes_.size(); }

  void need(size_t n) const {
    if (off_ + n > bytes_.size()) {
      throw DataError(strfmt("'%s': truncated payload", path_.c_str()));
    }
  }

 private:
  const std::string& bytes_;
  const std::string& path_;
  size_t off_ = 0;
};

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string Checkpoint::meta(const std::string& key) const {
  for (const auto& [k, v] : metadata) {
    if (k == key) return v;
  }
  return "";
}

void Checkpoint::set_meta(const std::string& key, const std::string& value) {
  for (auto& [k, v] : metadata) {
    if (k == key) {
      v = value;
      return;
    }
  }
  metadata.emplace_back(key, value);
}

Checkpoint make_checkpoint(const ModelSpec& spec, const ParamStore& store) {
  Checkpoint ckpt;
  for (const auto& [name, entry] : store) {
    ckpt.tensors.emplace_back(name, entry.tensor);  // map order == name order
  }
  ckpt.set_meta("spec_digest", spec.digest());
  ckpt.set_meta("arch", spec.arch);
  ckpt.set_meta("num_classes", std::to_string(spec.num_classes));
  ckpt.set_meta("input_channels", std::to_string(spec.input_shape[0]));
  ckpt.set_meta("input_height", std::to_string(spec.input_shape[1]));
  ckpt.set_meta("input_width", std::to_string(spec.input_shape[2]));
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, ckpt.version);
  put_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    put_str(out, name);
    out.push_back(0);  // dtype: float32
    out.push_back(static_cast<char>(tensor.rank()));
    for (int i = 0; i < tensor.rank(); ++i) {
      put_u32(out, static_cast<uint32_t>(tensor.extent(i)));
    }
    for (int64_t i = 0; i < tensor.numel(); ++i) put_f32(out, tensor[i]);
  }
  put_u32(out, static_cast<uint32_t>(ckpt.metadata.size()));
  for (const auto& [k, v] : ckpt.metadata) {
    put_str(out, k);
    put_str(out, v);
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError(strfmt("cannot write checkpoint '%s'", path.c_str()));
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!os) throw DataError(strfmt("short write to '%s'", path.c_str()));
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(strfmt("cannot open checkpoint '%s'", path.c_str()));
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw DataError(strfmt("'%s': corrupt header (bad magic)", path.c_str()));
  }
  Reader r(bytes, path);
  r.str(4);  // magic
  Checkpoint ckpt;
  ckpt.version = r.u32();
  if (ckpt.version != kVersion) {
    throw DataError(strfmt("'%s': unsupported version %u", path.c_str(),
                           ckpt.version));
  }
  const uint32_t count = r.u32();
  ckpt.tensors.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = r.u32();
    std::string name = r.str(name_len);
    const uint8_t dtype = r.u8();
    if (dtype != 0) {
      throw DataError(strfmt("'%s': tensor '%s' has unsupported dtype %u",
                             path.c_str(), name.c_str(), dtype));
    }
    const uint8_t rank = r.u8();
    std::vector<int> shape(rank);
    int64_t numel = 1;
    for (int d = 0; d < rank; ++d) {
      const uint32_t e = r.u32();
      if (e == 0 || e > (1u << 28)) {
        throw DataError(strfmt("'%s': tensor '%s' has bad extent %u",
                               path.c_str(), name.c_str(), e));
      }
      shape[static_cast<size_t>(d)] = static_cast<int>(e);
      numel *= e;
    }
    r.need(static_cast<size_t>(numel) * 4);
    std::vector<float> data(static_cast<size_t>(numel));
    for (auto& v : data) v = r.f32();
    ckpt.tensors.emplace_back(std::move(name),
                              Tensor(std::move(shape), std::move(data)));
  }
  const uint32_t pairs = r.u32();
  for (uint32_t i = 0; i < pairs; ++i) {
    const uint32_t klen = r.u32();
    std::string key = r.str(klen);
    const uint32_t vlen = r.u32();
    std::string value = r.str(vlen);
    ckpt.metadata.emplace_back(std::move(key), std::move(value));
  }
  if (!r.at_end()) {
    throw DataError(strfmt("'%s': trailing bytes after payload", path.c_str()));
  }
  return ckpt;
}

void restore_into(const Checkpoint& ckpt, ParamStore& store) {
  for (const auto& [name, tensor] : ckpt.tensors) {
    if (store.contains(name)) {
      Tensor& dst = store.tensor(name);
      if (!dst.same_shape(tensor)) {
        throw DataError(strfmt("checkpoint tensor '%s' has shape %s, store "
                               "expects %s",
                               name.c_str(), tensor.shape_str().c_str(),
                               dst.shape_str().c_str()));
      }
      dst = tensor;
    } else {
      store.add(name, tensor, false);
    }
  }
}

}  // namespace resasr
