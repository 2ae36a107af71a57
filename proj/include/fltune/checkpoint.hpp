/*
 * Copyright 2026 The fltune Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fltune/params.hpp"
#include "fltune/tensor.hpp"

namespace fltune {

/// Unreadable, truncated or incompatible checkpoint file.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointExtension = ".flckpt";

enum class CheckpointKind {
  kFull,     // every registered tensor
  kAdapter,  // trainable tensors only
};

std::string_view to_string(CheckpointKind kind);

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::size_t offset = 0;  // bytes from the start of the payload
};

struct CheckpointManifest {
  int version = kCheckpointVersion;
  CheckpointKind kind = CheckpointKind::kFull;
  /// Single-line configuration echo (JSON).
  std::string config;
  std::vector<CheckpointTensor> tensors;
  std::size_t payload_bytes = 0;
};

/// Serializes the selected registry tensors. Identical contents give
/// identical bytes. The file is written to a sibling temp path and renamed.
void save_checkpoint(const std::string& path, const ParamRegistry& registry, CheckpointKind kind,
                     std::string_view config_echo);

/// In-memory encoding used by save_checkpoint.
std::string encode_checkpoint(const ParamRegistry& registry, CheckpointKind kind, std::string_view config_echo);

CheckpointManifest read_manifest(const std::string& path);

/// Copies tensors from `path` into the matching registry entries. Every
/// name and shape is checked before any value is written; a full checkpoint
/// must cover every entry, an adapter checkpoint every trainable entry.
/// Returns the manifest.
CheckpointManifest load_checkpoint(const std::string& path, ParamRegistry& registry);
CheckpointManifest decode_checkpoint(std::string_view bytes, ParamRegistry& registry);

}  // namespace fltune
