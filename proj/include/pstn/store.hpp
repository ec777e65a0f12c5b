// Copyright 2026 The pstn Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Binary checkpoints and JSON run manifests.
//
// Checkpoint layout (little-endian):
//   "PSTN" | u32 version | u8 endianness (1 = little) | u8 dtype (0 f64, 1 f32)
//   u32 metadata length | metadata (JSON text)
//   u32 tensor count | per tensor: u32 name length, name, u32 rank,
//   u64 dims[rank], raw data
//   u64 FNV-1a checksum of every preceding byte

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "pstn/model.hpp"
#include "pstn/pacbayes.hpp"

namespace pstn {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;
  DType dtype = DType::f64;  // as stored on disk

  const Tensor* find(const std::string& name) const;
  void put(const std::string& name, Tensor t);
};

std::string serialize_checkpoint(const Checkpoint& ckpt, DType dtype = DType::f64);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt, DType dtype = DType::f64);
// Throws CheckpointError on a bad magic, version, checksum or layout.
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Every parameter plus the model configuration and frozen set.
Checkpoint model_checkpoint(const TransformerLM& model);
// Rebuilds a model; throws CheckpointError if a parameter is missing,
// duplicated or misshapen.
TransformerLM model_from_checkpoint(const Checkpoint& ckpt);

// Stored as "noise.q.<param>" / "noise.p.<param>" tensors.
void put_noise(Checkpoint& ckpt, const NoiseState& noise);
NoiseState noise_from_checkpoint(const Checkpoint& ckpt, const TransformerLM& model);
void put_importance(Checkpoint& ckpt, const ImportanceMatrix& imp);

std::string hex64(std::uint64_t v);
std::uint64_t file_hash(const std::string& path);
std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

struct RunManifest {
  std::string command;
  std::string tool_version;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> inputs;   // name -> content hash
  std::map<std::string, std::string> outputs;  // file name -> content hash
  std::map<std::string, double> stage_seconds;
  std::vector<std::string> warnings;
  nlohmann::json extra = nlohmann::json::object();

  // Hashes every listed output file relative to `dir`.
  void record_output(const std::string& dir, const std::string& file);
};

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const std::string& path, const RunManifest& m);
RunManifest load_manifest(const std::string& path);

inline constexpr const char* kToolVersion = "pstn 0.1.0";

}  // namespace pstn
