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

#include "fltune/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fltune {

namespace {

constexpr std::string_view kMagic = "FLCKPT";
constexpr std::string_view kSentinel = "--- payload ---";

static_assert(sizeof(double) == 8);

void append_le(std::string& out, double v) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<char>(bits & 0xffu));
    bits >>= 8;
  }
}

double read_le(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | static_cast<unsigned char>(p[i]);
  return std::bit_cast<double>(bits);
}

bool selected(const ParamRegistry::Entry& e, CheckpointKind kind) {
  return kind == CheckpointKind::kFull || e.info.trainable;
}

std::string_view next_line(std::string_view bytes, std::size_t& pos) {
  const auto nl = bytes.find('\n', pos);
  if (nl == std::string_view::npos) throw CheckpointError("checkpoint manifest is truncated");
  const std::string_view line = bytes.substr(pos, nl - pos);
  pos = nl + 1;
  return line;
}

std::size_t parse_size(const std::string& token, const char* what) {
  std::size_t used = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(token, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != token.size() || token.empty() || token[0] == '-') {
    throw CheckpointError(std::string("checkpoint manifest: malformed ") + what + " '" + token + "'");
  }
  return static_cast<std::size_t>(v);
}

CheckpointManifest parse_manifest(std::string_view bytes, std::size_t& pos) {
  CheckpointManifest m;
  {
    std::istringstream line{std::string(next_line(bytes, pos))};
    std::string magic, version;
    line >> magic >> version;
    if (magic != kMagic) throw CheckpointError("not a checkpoint file (missing FLCKPT header)");
    m.version = static_cast<int>(parse_size(version, "version"));
    if (m.version != kCheckpointVersion) {
      throw CheckpointError("unsupported checkpoint version " + version + " (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
  }
  {
    const std::string_view line = next_line(bytes, pos);
    if (line == "kind full") {
      m.kind = CheckpointKind::kFull;
    } else if (line == "kind adapter") {
      m.kind = CheckpointKind::kAdapter;
    } else {
      throw CheckpointError("checkpoint manifest: bad kind line '" + std::string(line) + "'");
    }
  }
  {
    const std::string_view line = next_line(bytes, pos);
    if (line.substr(0, 7) != "config ") throw CheckpointError("checkpoint manifest: missing config line");
    m.config = std::string(line.substr(7));
  }
  std::size_t count = 0;
  {
    std::istringstream line{std::string(next_line(bytes, pos))};
    std::string key, n;
    line >> key >> n;
    if (key != "tensors") throw CheckpointError("checkpoint manifest: missing tensor count");
    count = parse_size(n, "tensor count");
  }
  std::size_t expected_offset = 0;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream line{std::string(next_line(bytes, pos))};
    std::string key, name, rows, cols, offset, extra;
    line >> key >> name >> rows >> cols >> offset >> extra;
    if (key != "tensor" || offset.empty() || !extra.empty()) {
      throw CheckpointError("checkpoint manifest: malformed tensor line " + std::to_string(i + 1));
    }
    CheckpointTensor t{name, {parse_size(rows, "rows"), parse_size(cols, "cols")}, parse_size(offset, "offset")};
    if (t.offset != expected_offset) {
      throw CheckpointError("checkpoint manifest: tensor " + name + " has offset " + offset + ", expected " +
                            std::to_string(expected_offset));
    }
    expected_offset += 8 * t.shape.rows * t.shape.cols;
    m.tensors.push_back(std::move(t));
  }
  {
    std::istringstream line{std::string(next_line(bytes, pos))};
    std::string key, n;
    line >> key >> n;
    if (key != "payload_bytes") throw CheckpointError("checkpoint manifest: missing payload_bytes");
    m.payload_bytes = parse_size(n, "payload_bytes");
    if (m.payload_bytes != expected_offset) {
      throw CheckpointError("checkpoint manifest: payload_bytes " + n + " disagrees with tensor table total " +
                            std::to_string(expected_offset));
    }
  }
  if (next_line(bytes, pos) != kSentinel) throw CheckpointError("checkpoint manifest: missing payload sentinel");
  return m;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

}  // namespace

std::string_view to_string(CheckpointKind kind) { return kind == CheckpointKind::kFull ? "full" : "adapter"; }

std::string encode_checkpoint(const ParamRegistry& registry, CheckpointKind kind, std::string_view config_echo) {
  if (config_echo.find('\n') != std::string_view::npos) {
    throw CheckpointError("checkpoint config echo must be a single line");
  }
  std::ostringstream manifest;
  manifest << kMagic << ' ' << kCheckpointVersion << '\n';
  manifest << "kind " << to_string(kind) << '\n';
  manifest << "config " << config_echo << '\n';
  std::size_t count = 0;
  for (const auto& e : registry.entries()) count += selected(e, kind) ? 1 : 0;
  manifest << "tensors " << count << '\n';
  std::size_t offset = 0;
  for (const auto& e : registry.entries()) {
    if (!selected(e, kind)) continue;
    if (e.info.name.find_first_of(" \t\n") != std::string::npos) {
      throw CheckpointError("tensor name '" + e.info.name + "' contains whitespace");
    }
    manifest << "tensor " << e.info.name << ' ' << e.tensor.rows() << ' ' << e.tensor.cols() << ' ' << offset << '\n';
    offset += 8 * e.tensor.size();
  }
  manifest << "payload_bytes " << offset << '\n' << kSentinel << '\n';

  std::string out = manifest.str();
  out.reserve(out.size() + offset);
  for (const auto& e : registry.entries()) {
    if (!selected(e, kind)) continue;
    for (double v : e.tensor.data()) append_le(out, v);
  }
  return out;
}

void save_checkpoint(const std::string& path, const ParamRegistry& registry, CheckpointKind kind,
                     std::string_view config_echo) {
  const std::string bytes = encode_checkpoint(registry, kind, config_echo);
  const std::string temp = path + ".tmp";
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + temp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw CheckpointError("write failed for checkpoint '" + temp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(temp, path, ec);
  if (ec) {
    std::filesystem::remove(temp, ec);
    throw CheckpointError("cannot move checkpoint into place at '" + path + "'");
  }
}

CheckpointManifest read_manifest(const std::string& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  return parse_manifest(bytes, pos);
}

CheckpointManifest decode_checkpoint(std::string_view bytes, ParamRegistry& registry) {
  std::size_t pos = 0;
  CheckpointManifest m = parse_manifest(bytes, pos);
  const std::size_t available = bytes.size() - pos;
  if (available < m.payload_bytes) {
    throw CheckpointError("checkpoint payload is truncated: " + std::to_string(available) + " of " +
                          std::to_string(m.payload_bytes) + " bytes present");
  }
  if (available > m.payload_bytes) {
    throw CheckpointError("checkpoint has " + std::to_string(available - m.payload_bytes) +
                          " unexpected bytes after the payload");
  }

  // Validate everything before touching any tensor.
  std::map<std::string, const CheckpointTensor*> by_name;
  for (const auto& t : m.tensors) {
    if (!by_name.emplace(t.name, &t).second) throw CheckpointError("checkpoint lists tensor " + t.name + " twice");
    const auto* entry = registry.find(t.name);
    if (entry == nullptr) throw CheckpointError("checkpoint tensor " + t.name + " does not exist in the model");
    if (entry->tensor.shape() != t.shape) {
      throw CheckpointError("shape mismatch for " + t.name + ": checkpoint " + to_string(t.shape) + ", model " +
                            to_string(entry->tensor.shape()));
    }
    if (m.kind == CheckpointKind::kAdapter && !entry->info.trainable) {
      throw CheckpointError("adapter checkpoint contains frozen tensor " + t.name);
    }
  }
  for (const auto& e : registry.entries()) {
    if (selected(e, m.kind) && !by_name.count(e.info.name)) {
      throw CheckpointError(std::string(to_string(m.kind)) + " checkpoint is missing tensor " + e.info.name);
    }
  }

  const char* payload = bytes.data() + pos;
  for (const auto& t : m.tensors) {
    Tensor target = registry.find(t.name)->tensor;
    auto out = target.mutable_data();
    const char* p = payload + t.offset;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = read_le(p + 8 * i);
  }
  return m;
}

CheckpointManifest load_checkpoint(const std::string& path, ParamRegistry& registry) {
  const std::string bytes = read_file(path);
  return decode_checkpoint(bytes, registry);
}

}  // namespace fltune
