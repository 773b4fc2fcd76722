// Copyright 2026 The medpose Authors. All Rights Reserved.
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

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "medpose/checkpoint.hpp"
#include "medpose/error.hpp"
#include "medpose/io.hpp"
#include "support.hpp"
#include "support_model.hpp"

namespace medpose {
namespace {

namespace fs = std::filesystem;

ModelConfig small() {
  ModelConfig c;
  c.input_height = c.input_width = 16;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.depth = 2;
  c.heads = 2;
  c.deconv_stages = 1;
  c.deconv_channels = 4;
  c.dataset_heads = {{"d", 3}};
  return c;
}

FloatModel randomized(std::uint64_t seed) {
  FloatModel m = build_model<float>(small(), seed);
  testing::randomize_params(m, seed + 1);
  return m;
}

std::string bytes_of(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void write_bytes(const fs::path& p, const std::string& b) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(b.data(), static_cast<std::streamsize>(b.size()));
}

Error error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  ADD_FAILURE() << "expected an error";
  return Error(ErrorKind::kIo, "none");
}

TEST(Checkpoint, RoundTripIsBitExact) {
  testing::TempDir dir("ckpt");
  FloatModel m = randomized(1);
  m.params.at("norm.bias")[0] = -0.0f;
  m.params.at("norm.bias")[1] = 1e-42f;  // subnormal
  save_checkpoint(dir / "a.ckpt", m);
  const Checkpoint ck = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(ck.model.config, m.config);
  EXPECT_EQ(ck.model.trainable, m.trainable);
  EXPECT_FALSE(ck.optim.has_value());
  ASSERT_EQ(ck.model.params.size(), m.params.size());
  for (const auto& [name, t] : m.params) {
    const Tensor& u = ck.model.param(name);
    ASSERT_EQ(u.shape(), t.shape());
    EXPECT_EQ(std::memcmp(u.data(), t.data(), t.numel() * sizeof(float)), 0) << name;
  }
  save_checkpoint(dir / "b.ckpt", ck.model);
  EXPECT_EQ(bytes_of(dir / "a.ckpt"), bytes_of(dir / "b.ckpt"));
}

TEST(Checkpoint, LayoutPrefix) {
  testing::TempDir dir("ckpt");
  save_checkpoint(dir / "a.ckpt", randomized(2));
  const std::string b = bytes_of(dir / "a.ckpt");
  ASSERT_GT(b.size(), 16u);
  EXPECT_EQ(b.substr(0, 4), "MSAP");
  EXPECT_EQ(b[4], 1);
  EXPECT_EQ(b[5], 0);
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(b[8 + i]);
  const auto header = nlohmann::json::parse(b.substr(16, len));
  EXPECT_TRUE(header.contains("config"));
  EXPECT_EQ(header.at("tensors").at(0).at("dtype"), "f32");
  std::size_t floats = 0;
  for (const auto& [n, t] : randomized(2).params) floats += t.numel();
  EXPECT_EQ(b.size(), 16 + len + 4 * floats);
}

TEST(Checkpoint, LoraAndOptimizerStateRoundTrip) {
  testing::TempDir dir("ckpt");
  std::mt19937_64 rng(3);
  FloatModel m = randomized(3);
  lora_inject(m, LoraConfig{2, 4.0, true, true}, 4);
  OptimState s;
  for (int i = 0; i < 3; ++i) {
    std::map<std::string, Tensor> g;
    for (const auto& n : m.trainable) g.emplace(n, testing::random_tensor_f(m.param(n).shape(), rng));
    adamw_step(m, g, s, AdamWConfig{});
  }
  save_checkpoint(dir / "a.ckpt", m, &s);
  const Checkpoint ck = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(ck.model.params, m.params);
  EXPECT_EQ(ck.model.lora, m.lora);
  EXPECT_EQ(ck.model.trainable, m.trainable);
  ASSERT_TRUE(ck.optim.has_value());
  EXPECT_EQ(ck.optim->step, 3u);
  ASSERT_EQ(ck.optim->moments.size(), s.moments.size());
  for (const auto& [n, mo] : s.moments) {
    EXPECT_EQ(ck.optim->moments.at(n).m.storage(), mo.m.storage()) << n;
    EXPECT_EQ(ck.optim->moments.at(n).v.storage(), mo.v.storage()) << n;
  }
}

TEST(Checkpoint, BadMagicIsFormatError) {
  testing::TempDir dir("ckpt");
  save_checkpoint(dir / "a.ckpt", randomized(4));
  std::string b = bytes_of(dir / "a.ckpt");
  b[0] = 'X';
  write_bytes(dir / "a.ckpt", b);
  EXPECT_EQ(error_of([&] { load_checkpoint(dir / "a.ckpt"); }).kind(), ErrorKind::kFormat);
}

TEST(Checkpoint, VersionMismatch) {
  testing::TempDir dir("ckpt");
  save_checkpoint(dir / "a.ckpt", randomized(4));
  std::string b = bytes_of(dir / "a.ckpt");
  b[4] = 2;
  write_bytes(dir / "a.ckpt", b);
  const Error e = error_of([&] { load_checkpoint(dir / "a.ckpt"); });
  EXPECT_EQ(e.kind(), ErrorKind::kFormat);
  EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
}

TEST(Checkpoint, TruncationAnywhereIsFormatError) {
  testing::TempDir dir("ckpt");
  save_checkpoint(dir / "a.ckpt", randomized(5));
  const std::string b = bytes_of(dir / "a.ckpt");
  for (std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{15}, std::size_t{40}, b.size() / 2,
                           b.size() - 1}) {
    write_bytes(dir / "t.ckpt", b.substr(0, keep));
    EXPECT_EQ(error_of([&] { load_checkpoint(dir / "t.ckpt"); }).kind(), ErrorKind::kFormat) << keep;
  }
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_EQ(error_of([] { load_checkpoint("/nonexistent/x.ckpt"); }).kind(), ErrorKind::kIo);
}

TEST(Checkpoint, ShapeTableInconsistentWithConfig) {
  testing::TempDir dir("ckpt");
  FloatModel m = randomized(6);
  m.params.at("blocks.1.norm2.weight") = Tensor({9});
  save_checkpoint(dir / "a.ckpt", m);
  const Error e = error_of([&] { load_checkpoint(dir / "a.ckpt"); });
  EXPECT_EQ(e.kind(), ErrorKind::kShape);
  EXPECT_EQ(e.subject(), "blocks.1.norm2.weight");
}

TEST(Checkpoint, MismatchedExpectedConfigNamesParameter) {
  testing::TempDir dir("ckpt");
  save_checkpoint(dir / "a.ckpt", randomized(7));
  ModelConfig other = small();
  other.dataset_heads = {{"d", 5}};
  const Error e = error_of([&] { load_checkpoint(dir / "a.ckpt", other); });
  EXPECT_EQ(e.kind(), ErrorKind::kShape);
  EXPECT_TRUE(e.subject() == "head.out.d.weight" || e.subject() == "head.out.d.bias") << e.subject();
  EXPECT_NE(std::string(e.what()).find(e.subject()), std::string::npos);

  other = small();
  other.dataset_heads = {{"other", 3}};
  const Error missing = error_of([&] { load_checkpoint(dir / "a.ckpt", other); });
  EXPECT_EQ(missing.kind(), ErrorKind::kValidation);
  EXPECT_NE(missing.subject().find("head.out."), std::string::npos);
}

TEST(Checkpoint, InputSizeChangeResizesPositionEmbedding) {
  testing::TempDir dir("ckpt");
  const FloatModel m = randomized(8);
  save_checkpoint(dir / "a.ckpt", m);
  ModelConfig bigger = small();
  bigger.input_height = 32;
  bigger.input_width = 24;
  const Checkpoint ck = load_checkpoint(dir / "a.ckpt", bigger);
  EXPECT_EQ(ck.model.config, bigger);
  EXPECT_EQ(ck.model.param("pos_embed"), resize_pos_embed(m.param("pos_embed"), 4, 4, 8, 6));
  for (const auto& [n, t] : m.params) {
    if (n != "pos_embed") EXPECT_EQ(ck.model.param(n), t) << n;
  }
}

TEST(Checkpoint, AtomicWriteLeavesOnlyTarget) {
  testing::TempDir dir("ckpt");
  save_checkpoint(dir / "a.ckpt", randomized(9));
  save_checkpoint(dir / "a.ckpt", randomized(10));
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(dir.path())) {
    ++files;
    EXPECT_EQ(e.path().filename(), "a.ckpt");
  }
  EXPECT_EQ(files, 1u);
  EXPECT_EQ(load_checkpoint(dir / "a.ckpt").model.params, randomized(10).params);
}

}  // namespace
}  // namespace medpose
