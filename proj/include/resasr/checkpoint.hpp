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

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "resasr/model.hpp"
#include "resasr/tensor.hpp"

namespace resasr {

// Bit-exact named-tensor archive. Layout, all integers little-endian:
//
//   magic "RNCK" | u32 version = 1 | u32 tensor count
//   per tensor:  u32 name length | UTF-8 name | u8 dtype (0 = float32)
//                | u8 rank | rank x u32 extents
//                | row-major little-endian float32 payload
//   u32 metadata pair count
//   per pair:    u32 key length | key | u32 value length | value
//
// Tensors are stored in ascending name order so identical stores always
// serialize to identical bytes.
struct Checkpoint {
  uint32_t version = 1;
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::vector<std::pair<std::string, std::string>> metadata;

  const Tensor* find(const std::string& name) const;
  /// Metadata value, or "" when the key is absent.
  std::string meta(const std::string& key) const;
  void set_meta(const std::string& key, const std::string& value);
};

/// Snapshot of every store entry (parameters, running statistics, feature
/// normalization) plus the spec digest and architecture metadata.
Checkpoint make_checkpoint(const ModelSpec& spec, const ParamStore& store);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);

/// Validates magic, version and structure; throws DataError on corruption.
Checkpoint load_checkpoint(const std::string& path);

// Writes checkpoint tensors back into a store: existing entries are
// overwritten (shapes must match), unknown names are added as
// non-trainable state.
void restore_into(const Checkpoint& ckpt, ParamStore& store);

}  // namespace resasr
