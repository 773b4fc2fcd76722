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

#include "medpose/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "medpose/error.hpp"
#include "medpose/io.hpp"

namespace medpose {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'M', 'S', 'A', 'P'};

template <typename U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get(const std::string& in, std::size_t pos) {
  U value;
  std::memcpy(&value, in.data() + pos, sizeof(U));
  return value;
}

std::string read_binary(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::kIo, "cannot open checkpoint " + path.string(), path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void check_shapes(const FloatModel& loaded, const FloatModel& reference) {
  for (const auto& [name, t] : reference.params) {
    auto it = loaded.params.find(name);
    if (it == loaded.params.end()) {
      fail(ErrorKind::kValidation, "checkpoint is missing parameter '" + name + "'", name);
    }
    if (it->second.shape() != t.shape()) {
      fail(ErrorKind::kShape,
           "parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
               ", config expects " + shape_string(t.shape()),
           name);
    }
  }
  for (const auto& [name, t] : loaded.params) {
    if (!reference.params.count(name)) {
      fail(ErrorKind::kValidation, "checkpoint has unexpected parameter '" + name + "'", name);
    }
  }
}

FloatModel skeleton(const ModelConfig& cfg, const std::optional<LoraConfig>& lora) {
  FloatModel m = build_model<float>(cfg, 0);
  if (lora) lora_inject(m, *lora, 0);
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const FloatModel& model,
                     const OptimState* optim) {
  nlohmann::json header;
  header["config"] = model.config;
  header["lora"] = model.lora ? nlohmann::json(*model.lora) : nlohmann::json(nullptr);
  header["trainable"] = model.trainable;

  std::vector<std::pair<std::string, const Tensor*>> entries;
  for (const auto& [name, t] : model.params) entries.emplace_back(name, &t);
  if (optim) {
    header["optimizer_state"] = {{"step", optim->step}};
    for (const auto& [name, mo] : optim->moments) {
      entries.emplace_back("optim.m." + name, &mo.m);
      entries.emplace_back("optim.v." + name, &mo.v);
    }
  }

  nlohmann::json table = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : entries) {
    table.push_back({{"name", name}, {"shape", t->shape()}, {"dtype", "f32"}, {"offset", offset}});
    offset += t->numel() * sizeof(float);
  }
  header["tensors"] = table;
  const std::string text = header.dump();

  std::string bytes(kMagic, 4);
  put<std::uint32_t>(bytes, kCheckpointVersion);
  put<std::uint64_t>(bytes, text.size());
  bytes += text;
  bytes.reserve(bytes.size() + offset);
  for (const auto& [name, t] : entries) {
    bytes.append(reinterpret_cast<const char*>(t->data()), t->numel() * sizeof(float));
  }
  write_file_atomic(path, bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_binary(path);
  const std::string where = path.string();
  auto bad = [&](const std::string& what) { fail(ErrorKind::kFormat, where + ": " + what, where); };
  if (bytes.size() < 16) bad("file is truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) bad("bad magic, not a checkpoint");
  const auto version = get<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    bad("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - 16) bad("file is truncated");
  const std::size_t payload = 16 + header_len;

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + static_cast<std::ptrdiff_t>(payload));
  } catch (const nlohmann::json::exception& e) {
    bad(std::string("unreadable header: ") + e.what());
  }

  Checkpoint out;
  try {
    ModelConfig cfg = header.at("config").get<ModelConfig>();
    std::optional<LoraConfig> lora;
    if (!header.at("lora").is_null()) lora = header.at("lora").get<LoraConfig>();
    out.model.config = cfg;
    out.model.lora = lora;
    out.model.trainable = header.at("trainable").get<std::set<std::string>>();
    validate_config(cfg);

    std::map<std::string, Tensor> optim_tensors;
    for (const auto& e : header.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      const Shape shape = e.at("shape").get<Shape>();
      if (e.at("dtype").get<std::string>() != "f32") bad("tensor '" + name + "' is not f32");
      const std::size_t offset = e.at("offset").get<std::size_t>();
      const std::size_t n = shape_numel(shape);
      if (offset > bytes.size() - payload || n * sizeof(float) > bytes.size() - payload - offset) {
        bad("file is truncated");
      }
      Tensor t(shape);
      std::memcpy(t.data(), bytes.data() + payload + offset, n * sizeof(float));
      if (name.starts_with("optim.")) {
        optim_tensors.emplace(name, std::move(t));
      } else if (!out.model.params.emplace(name, std::move(t)).second) {
        bad("duplicate tensor '" + name + "'");
      }
    }
    if (header.contains("optimizer_state")) {
      OptimState st;
      st.step = header.at("optimizer_state").at("step").get<std::size_t>();
      for (auto& [name, t] : optim_tensors) {
        if (name.starts_with("optim.m.")) st.moments[name.substr(8)].m = std::move(t);
        else if (name.starts_with("optim.v.")) st.moments[name.substr(8)].v = std::move(t);
        else bad("unknown optimizer tensor '" + name + "'");
      }
      out.optim = std::move(st);
    }
    check_shapes(out.model, skeleton(cfg, lora));
    for (const auto& name : out.model.trainable) {
      if (!out.model.params.count(name)) bad("trainable set names unknown parameter '" + name + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    bad(std::string("malformed header: ") + e.what());
  }
  return out;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ck = load_checkpoint(path);
  ModelConfig& have = ck.model.config;
  if (have.input_height != expected.input_height || have.input_width != expected.input_width) {
    ModelConfig probe = have;
    probe.input_height = expected.input_height;
    probe.input_width = expected.input_width;
    validate_config(probe);
    Tensor& pos = ck.model.param("pos_embed");
    pos = resize_pos_embed(pos, have.grid_height(), have.grid_width(), probe.grid_height(),
                           probe.grid_width());
    have = probe;
    if (ck.optim) ck.optim->moments.erase("pos_embed");
  }
  check_shapes(ck.model, skeleton(expected, ck.model.lora));
  if (!(have == expected)) {
    fail(ErrorKind::kValidation, "checkpoint config differs from the requested model config");
  }
  return ck;
}

}  // namespace medpose
