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

#include <gtest/gtest.h>

#include <filesystem>

#include "pstn/hash.hpp"
#include "pstn/store.hpp"

using namespace pstn;

namespace {

TransformerLM random_model() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.width = 8;
  cfg.ff_width = 12;
  cfg.vocab_size = 15;
  cfg.max_len = 6;
  cfg.init_std = 0.3;
  cfg.init_seed = 77;
  TransformerLM m(cfg);
  m.attach_classifier(3, 5);
  m.freeze_embeddings();
  return m;
}

std::string tmp(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "pstn_store_test";
  std::filesystem::create_directories(dir);
  return (dir / name).string();
}

}  // namespace

TEST(Store, ModelRoundTripPreservesChecksum) {
  const TransformerLM m = random_model();
  save_checkpoint(tmp("m.ckpt"), model_checkpoint(m));
  const TransformerLM back = model_from_checkpoint(load_checkpoint(tmp("m.ckpt")));
  EXPECT_EQ(back.checksum(), m.checksum());
  EXPECT_EQ(back.frozen(), m.frozen());
  EXPECT_EQ(back.config().num_classes, 3u);
}

TEST(Store, CorruptedByteIsRejected) {
  const std::string bytes = serialize_checkpoint(model_checkpoint(random_model()));
  for (std::size_t pos : {std::size_t{40}, bytes.size() / 2, bytes.size() - 3}) {
    std::string bad = bytes;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x10);
    EXPECT_THROW(parse_checkpoint(bad), CheckpointError) << pos;
  }
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 1)), CheckpointError);
  EXPECT_THROW(parse_checkpoint(bytes + "x"), CheckpointError);
}

TEST(Store, WrongMagicIsRejected) {
  std::string bytes = serialize_checkpoint(model_checkpoint(random_model()));
  bytes[0] = 'X';
  try {
    parse_checkpoint(bytes);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("magic"), std::string::npos);
  }
  EXPECT_THROW(load_checkpoint(tmp("missing.ckpt")), CheckpointError);
}

TEST(Store, Float32TagRoundTripsWithinPrecision) {
  Checkpoint c;
  c.put("a", Tensor(Shape{2, 2}, {1.0, -0.5, 1e-3, 3.14159265358979}));
  const Checkpoint back = parse_checkpoint(serialize_checkpoint(c, DType::f32));
  EXPECT_EQ(back.dtype, DType::f32);
  const Tensor* t = back.find("a");
  ASSERT_NE(t, nullptr);
  EXPECT_EQ(t->shape, (Shape{2, 2}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(t->data[i], c.tensors[0].second.data[i], 1e-6);
  EXPECT_EQ(back.find("b"), nullptr);
}

TEST(Store, MissingOrMisshapenParameterRejected) {
  Checkpoint c = model_checkpoint(random_model());
  Checkpoint missing = c;
  missing.tensors.erase(missing.tensors.begin() + 3);
  EXPECT_THROW(model_from_checkpoint(missing), CheckpointError);
  Checkpoint wrong = c;
  wrong.tensors[2].second = Tensor({1, 1});
  EXPECT_THROW(model_from_checkpoint(wrong), CheckpointError);
}

TEST(Store, NoiseRoundTrip) {
  const TransformerLM m = random_model();
  NoiseState n = init_noise(m, 0.125);
  n.q[3] = -4.0;
  Checkpoint c;
  put_noise(c, n);
  const NoiseState back = noise_from_checkpoint(parse_checkpoint(serialize_checkpoint(c)), m);
  EXPECT_EQ(back.q, n.q);
  EXPECT_EQ(back.p, n.p);
  EXPECT_EQ(back.names, n.names);
  EXPECT_EQ(back.lambda, 0.125);
}

TEST(Store, ManifestRoundTrip) {
  RunManifest m;
  m.command = "pipeline";
  m.tool_version = kToolVersion;
  m.config = {{"a", 1}};
  m.seed = 42;
  write_file(tmp("out.txt"), "hello");
  m.record_output(std::filesystem::path(tmp("out.txt")).parent_path().string(), "out.txt");
  EXPECT_EQ(m.outputs.at("out.txt"), hex64(fnv1a64("hello")));
  m.stage_seconds["cma"] = 1.5;
  m.warnings = {"w"};
  save_manifest(tmp("manifest.json"), m);
  const RunManifest back = load_manifest(tmp("manifest.json"));
  EXPECT_EQ(back.command, m.command);
  EXPECT_EQ(back.seed, 42u);
  EXPECT_EQ(back.outputs, m.outputs);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.stage_seconds, m.stage_seconds);
  EXPECT_EQ(back.warnings, m.warnings);
}
