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

#include "medpose/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "medpose/error.hpp"
#include "medpose/heatmap.hpp"
#include "medpose/nn.hpp"
#include "medpose/parallel.hpp"
#include "medpose/rng.hpp"

namespace medpose {

namespace {

constexpr double kInitStd = 0.02;
constexpr double kNormEps = 1e-6;
constexpr std::size_t kDeconvKernel = 4;
constexpr std::size_t kDeconvStride = 2;
constexpr std::size_t kDeconvPad = 1;

std::string block_name(std::size_t i, const char* suffix) {
  return fmt::format("blocks.{}.{}", i, suffix);
}

bool starts_with(const std::string& s, std::string_view prefix) {
  return s.compare(0, prefix.size(), prefix) == 0;
}

bool is_adapter(const std::string& name) {
  return name.ends_with(".lora_A") || name.ends_with(".lora_B");
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

const DatasetHead* ModelConfig::find_head(const std::string& dataset) const {
  for (const auto& h : dataset_heads) {
    if (h.name == dataset) return &h;
  }
  return nullptr;
}

void validate_config(const ModelConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorKind::kConfig, "model config: " + what);
  };
  require(c.input_height >= 1 && c.input_width >= 1, "input size must be positive");
  require(c.in_channels >= 1, "in_channels must be at least 1");
  require(c.patch_size >= 1, "patch_size must be at least 1");
  require(c.input_height % c.patch_size == 0 && c.input_width % c.patch_size == 0,
          fmt::format("patch_size {} must divide the input size {}x{}", c.patch_size,
                      c.input_height, c.input_width));
  require(c.embed_dim >= 1 && c.heads >= 1, "embed_dim and heads must be positive");
  require(c.embed_dim % c.heads == 0,
          fmt::format("embed_dim {} is not divisible by heads {}", c.embed_dim, c.heads));
  require(c.mlp_ratio >= 1, "mlp_ratio must be at least 1");
  require(c.deconv_stages >= 1 && c.deconv_stages <= 8, "deconv_stages must lie in [1, 8]");
  require(c.deconv_channels >= 1, "deconv_channels must be at least 1");
  require(!c.dataset_heads.empty(), "at least one dataset head is required");
  for (std::size_t i = 0; i < c.dataset_heads.size(); ++i) {
    const auto& h = c.dataset_heads[i];
    require(!h.name.empty(), "dataset head name is empty");
    for (char ch : h.name) {
      require(std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-',
              "dataset head name '" + h.name + "' may only contain [A-Za-z0-9_-]");
    }
    require(h.landmarks >= 1, "dataset head '" + h.name + "' needs at least one landmark");
    for (std::size_t k = 0; k < i; ++k) {
      require(c.dataset_heads[k].name != h.name, "duplicate dataset head '" + h.name + "'");
    }
  }
}

namespace {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                         const char* where) {
  if (!j.is_object()) fail(ErrorKind::kConfig, std::string(where) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      fail(ErrorKind::kConfig, fmt::format("unknown key '{}' in {}", key, where), key);
    }
  }
}

template <typename V>
void read_key(const nlohmann::json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(out);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, fmt::format("bad value for '{}': {}", key, e.what()), key);
  }
}

}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& c) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : c.dataset_heads) heads.push_back({{"name", h.name}, {"landmarks", h.landmarks}});
  j = {{"input_size", {c.input_height, c.input_width}},
       {"in_channels", c.in_channels},
       {"patch_size", c.patch_size},
       {"embed_dim", c.embed_dim},
       {"depth", c.depth},
       {"heads", c.heads},
       {"mlp_ratio", c.mlp_ratio},
       {"head", {{"deconv_stages", c.deconv_stages}, {"deconv_channels", c.deconv_channels}}},
       {"dataset_heads", heads}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  reject_unknown_keys(j,
                      {"input_size", "in_channels", "patch_size", "embed_dim", "depth", "heads",
                       "mlp_ratio", "head", "dataset_heads"},
                      "model config");
  if (j.contains("input_size")) {
    std::vector<std::size_t> hw;
    read_key(j, "input_size", hw);
    if (hw.size() != 2) fail(ErrorKind::kConfig, "input_size must be [height, width]", "input_size");
    c.input_height = hw[0];
    c.input_width = hw[1];
  }
  read_key(j, "in_channels", c.in_channels);
  read_key(j, "patch_size", c.patch_size);
  read_key(j, "embed_dim", c.embed_dim);
  read_key(j, "depth", c.depth);
  read_key(j, "heads", c.heads);
  read_key(j, "mlp_ratio", c.mlp_ratio);
  if (j.contains("head")) {
    const auto& h = j.at("head");
    reject_unknown_keys(h, {"deconv_stages", "deconv_channels"}, "model head config");
    read_key(h, "deconv_stages", c.deconv_stages);
    read_key(h, "deconv_channels", c.deconv_channels);
  }
  if (j.contains("dataset_heads")) {
    if (!j.at("dataset_heads").is_array()) {
      fail(ErrorKind::kConfig, "dataset_heads must be an array", "dataset_heads");
    }
    c.dataset_heads.clear();
    for (const auto& e : j.at("dataset_heads")) {
      reject_unknown_keys(e, {"name", "landmarks"}, "dataset head");
      DatasetHead h;
      read_key(e, "name", h.name);
      read_key(e, "landmarks", h.landmarks);
      c.dataset_heads.push_back(std::move(h));
    }
  }
}

void validate_lora(const LoraConfig& lc) {
  if (lc.rank < 1) fail(ErrorKind::kConfig, "lora rank must be at least 1");
  if (!(lc.alpha > 0.0) || !std::isfinite(lc.alpha)) {
    fail(ErrorKind::kConfig, "lora alpha must be positive and finite");
  }
  if (!lc.qkv && !lc.proj) fail(ErrorKind::kConfig, "lora needs at least one target site");
}

void to_json(nlohmann::json& j, const LoraConfig& lc) {
  nlohmann::json sites = nlohmann::json::array();
  if (lc.qkv) sites.push_back("qkv");
  if (lc.proj) sites.push_back("proj");
  j = {{"rank", lc.rank}, {"alpha", lc.alpha}, {"target_sites", sites}};
}

void from_json(const nlohmann::json& j, LoraConfig& lc) {
  reject_unknown_keys(j, {"rank", "alpha", "target_sites"}, "lora config");
  read_key(j, "rank", lc.rank);
  if (j.contains("alpha")) {
    read_key(j, "alpha", lc.alpha);
  } else {
    lc.alpha = static_cast<double>(lc.rank);
  }
  if (j.contains("target_sites")) {
    std::vector<std::string> sites;
    read_key(j, "target_sites", sites);
    lc.qkv = lc.proj = false;
    for (const auto& s : sites) {
      if (s == "qkv") {
        lc.qkv = true;
      } else if (s == "proj") {
        lc.proj = true;
      } else {
        fail(ErrorKind::kConfig, "unknown lora target site '" + s + "'", "target_sites");
      }
    }
  }
}

TrainMode parse_train_mode(const std::string& text) {
  if (text == "full") return TrainMode::kFull;
  if (text == "lora_only") return TrainMode::kLoraOnly;
  if (text == "head_only") return TrainMode::kHeadOnly;
  fail(ErrorKind::kConfig, "unknown trainable mode '" + text + "'");
}

const char* to_string(TrainMode mode) noexcept {
  switch (mode) {
    case TrainMode::kFull: return "full";
    case TrainMode::kLoraOnly: return "lora_only";
    case TrainMode::kHeadOnly: return "head_only";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Model basics

template <typename T>
const BasicTensor<T>& Model<T>::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) fail(ErrorKind::kValidation, "unknown parameter '" + name + "'", name);
  return it->second;
}

template <typename T>
BasicTensor<T>& Model<T>::param(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) fail(ErrorKind::kValidation, "unknown parameter '" + name + "'", name);
  return it->second;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

namespace {

template <typename T>
BasicTensor<T> truncated_normal(Shape shape, std::uint64_t seed, const std::string& name) {
  std::mt19937_64 rng(derive_seed({seed, hash_name(name)}));
  std::normal_distribution<double> normal(0.0, 1.0);
  BasicTensor<T> t(std::move(shape));
  for (T& v : t.values()) {
    double z = normal(rng);
    while (std::abs(z) > 2.0) z = normal(rng);
    v = static_cast<T>(kInitStd * z);
  }
  return t;
}

template <typename T>
BasicTensor<T> plain_normal(Shape shape, std::uint64_t seed, const std::string& name) {
  std::mt19937_64 rng(derive_seed({seed, hash_name(name)}));
  std::normal_distribution<double> normal(0.0, kInitStd);
  BasicTensor<T> t(std::move(shape));
  for (T& v : t.values()) v = static_cast<T>(normal(rng));
  return t;
}

template <typename T>
void add_linear(Model<T>& m, const std::string& prefix, std::size_t dout, std::size_t din,
                std::uint64_t seed) {
  m.params[prefix + ".weight"] = truncated_normal<T>({dout, din}, seed, prefix + ".weight");
  m.params[prefix + ".bias"] = BasicTensor<T>({dout});
}

template <typename T>
void add_norm(Model<T>& m, const std::string& prefix, std::size_t d) {
  m.params[prefix + ".weight"] = BasicTensor<T>({d}, T(1));
  m.params[prefix + ".bias"] = BasicTensor<T>({d});
}

}  // namespace

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  validate_config(cfg);
  Model<T> m;
  m.config = cfg;
  const std::size_t d = cfg.embed_dim;
  add_linear(m, "patch_embed", d, cfg.in_channels * cfg.patch_size * cfg.patch_size, seed);
  m.params["pos_embed"] = BasicTensor<T>({cfg.tokens(), d});
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    add_norm(m, block_name(i, "norm1"), d);
    add_linear(m, block_name(i, "attn.qkv"), 3 * d, d, seed);
    add_linear(m, block_name(i, "attn.proj"), d, d, seed);
    add_norm(m, block_name(i, "norm2"), d);
    add_linear(m, block_name(i, "mlp.fc1"), cfg.mlp_ratio * d, d, seed);
    add_linear(m, block_name(i, "mlp.fc2"), d, cfg.mlp_ratio * d, seed);
  }
  add_norm(m, "norm", d);
  for (std::size_t s = 0; s < cfg.deconv_stages; ++s) {
    const std::string prefix = fmt::format("head.deconv.{}", s);
    const std::size_t cin = s == 0 ? d : cfg.deconv_channels;
    m.params[prefix + ".weight"] = truncated_normal<T>(
        {cin, cfg.deconv_channels, kDeconvKernel, kDeconvKernel}, seed, prefix + ".weight");
    m.params[prefix + ".bias"] = BasicTensor<T>({cfg.deconv_channels});
    add_norm(m, prefix + ".norm", cfg.deconv_channels);
  }
  for (const auto& h : cfg.dataset_heads) {
    add_linear(m, "head.out." + h.name, h.landmarks, cfg.deconv_channels, seed);
  }
  for (const auto& [name, t] : m.params) m.trainable.insert(name);
  return m;
}

template <typename T>
void add_dataset_head(Model<T>& m, const DatasetHead& head, std::uint64_t seed) {
  ModelConfig cfg = m.config;
  cfg.dataset_heads.push_back(head);
  validate_config(cfg);
  m.config = std::move(cfg);
  const std::string prefix = "head.out." + head.name;
  add_linear(m, prefix, head.landmarks, m.config.deconv_channels, seed);
  m.trainable.insert(prefix + ".weight");
  m.trainable.insert(prefix + ".bias");
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

template <typename T>
struct BlockState {
  nn::LayerNormContext<T> norm1;
  nn::AttentionContext<T> attn;
  nn::LayerNormContext<T> norm2;
  nn::LinearContext<T> fc1;
  nn::GeluContext<T> act;
  nn::LinearContext<T> fc2;
};

template <typename T>
struct StageState {
  nn::ConvContext<T> deconv;
  nn::ChannelNormContext<T> norm;
  nn::GeluContext<T> act;
};

template <typename T>
struct Pass {
  const Model<T>& m;
  bool record;
  nn::PatchEmbedContext<T> patch;
  std::vector<BlockState<T>> blocks;
  nn::LayerNormContext<T> norm;
  std::vector<StageState<T>> stages;
  nn::ConvContext<T> out;

  Pass(const Model<T>& model, bool rec)
      : m(model), record(rec), blocks(model.config.depth), stages(model.config.deconv_stages) {}

  const BasicTensor<T>& p(const std::string& name) const { return m.param(name); }

  std::optional<nn::LowRank<T>> adapter(const std::string& site) const {
    auto a = m.params.find(site + ".lora_A");
    if (a == m.params.end()) return std::nullopt;
    return nn::LowRank<T>{&a->second, &m.param(site + ".lora_B"),
                          static_cast<T>(m.lora->scale())};
  }

  nn::AttentionParams<T> attention(std::size_t i) const {
    const std::string qkv = block_name(i, "attn.qkv");
    const std::string proj = block_name(i, "attn.proj");
    return {&p(qkv + ".weight"), &p(qkv + ".bias"), &p(proj + ".weight"), &p(proj + ".bias"),
            m.config.heads,      adapter(qkv),      adapter(proj)};
  }

  template <typename C>
  C* ctx(C& c) { return record ? &c : nullptr; }

  BasicTensor<T> run(const BasicTensor<T>& image, const std::string& dataset) {
    const ModelConfig& cfg = m.config;
    if (!cfg.find_head(dataset)) {
      fail(ErrorKind::kValidation, "model has no head for dataset '" + dataset + "'", dataset);
    }
    require_shape(image.shape(), {cfg.in_channels, cfg.input_height, cfg.input_width},
                  "model input");
    BasicTensor<T> x = nn::patch_embed(image, p("patch_embed.weight"), p("patch_embed.bias"),
                                       cfg.patch_size, ctx(patch));
    nn::add_inplace(x, p("pos_embed"));
    const T eps = static_cast<T>(kNormEps);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
      BlockState<T>& b = blocks[i];
      BasicTensor<T> h = nn::layer_norm(x, p(block_name(i, "norm1.weight")),
                                        p(block_name(i, "norm1.bias")), eps, ctx(b.norm1));
      nn::add_inplace(x, nn::multi_head_attention(h, attention(i), ctx(b.attn)));
      h = nn::layer_norm(x, p(block_name(i, "norm2.weight")), p(block_name(i, "norm2.bias")), eps,
                         ctx(b.norm2));
      h = nn::linear(h, p(block_name(i, "mlp.fc1.weight")), p(block_name(i, "mlp.fc1.bias")),
                     ctx(b.fc1));
      h = nn::gelu(h, ctx(b.act));
      nn::add_inplace(x, nn::linear(h, p(block_name(i, "mlp.fc2.weight")),
                                    p(block_name(i, "mlp.fc2.bias")), ctx(b.fc2)));
    }
    x = nn::layer_norm(x, p("norm.weight"), p("norm.bias"), eps, ctx(norm));

    BasicTensor<T> y = nn::transpose(x).reshaped({cfg.embed_dim, cfg.grid_height(), cfg.grid_width()});
    for (std::size_t s = 0; s < cfg.deconv_stages; ++s) {
      const std::string prefix = fmt::format("head.deconv.{}", s);
      StageState<T>& st = stages[s];
      y = nn::conv_transpose2d(y, p(prefix + ".weight"), p(prefix + ".bias"), kDeconvStride,
                               kDeconvPad, ctx(st.deconv));
      y = nn::channel_layer_norm(y, p(prefix + ".norm.weight"), p(prefix + ".norm.bias"), eps,
                                 ctx(st.norm));
      y = nn::gelu(y, ctx(st.act));
    }
    const std::string out_prefix = "head.out." + dataset;
    return nn::conv1x1(y, p(out_prefix + ".weight"), p(out_prefix + ".bias"), ctx(out));
  }

  // Gradient bookkeeping -----------------------------------------------------

  std::map<std::string, BasicTensor<T>> grads;

  bool any_trainable(std::initializer_list<std::string> names) const {
    for (const auto& n : names) {
      if (m.is_trainable(n)) return true;
    }
    return false;
  }

  void keep(const std::string& name, BasicTensor<T>&& g) {
    if (m.is_trainable(name) && !g.empty()) grads[name] = std::move(g);
  }

  nn::GradRequest linear_request(const std::string& prefix, bool input) const {
    nn::GradRequest r;
    r.input = input;
    r.params = any_trainable({prefix + ".weight", prefix + ".bias"});
    r.adapter = any_trainable({prefix + ".lora_A", prefix + ".lora_B"});
    return r;
  }

  void keep_linear(const std::string& prefix, nn::LinearGrads<T>& g) {
    keep(prefix + ".weight", std::move(g.dw));
    keep(prefix + ".bias", std::move(g.db));
    keep(prefix + ".lora_A", std::move(g.da));
    keep(prefix + ".lora_B", std::move(g.db_lora));
  }

  void backward(const BasicTensor<T>& grad, const std::string& dataset) {
    const ModelConfig& cfg = m.config;
    bool backbone_needed = false;
    for (const auto& name : m.trainable) {
      if (!starts_with(name, "head.")) backbone_needed = true;
    }

    const std::string out_prefix = "head.out." + dataset;
    nn::GradRequest out_req;
    out_req.params = any_trainable({out_prefix + ".weight", out_prefix + ".bias"});
    nn::ConvGrads<T> og = nn::conv1x1_backward(out, p(out_prefix + ".weight"), grad, out_req);
    keep(out_prefix + ".weight", std::move(og.dk));
    keep(out_prefix + ".bias", std::move(og.db));
    BasicTensor<T> g = std::move(og.dx);

    for (std::size_t s = cfg.deconv_stages; s-- > 0;) {
      const std::string prefix = fmt::format("head.deconv.{}", s);
      StageState<T>& st = stages[s];
      g = nn::gelu_backward(st.act, g);
      nn::GradRequest nreq;
      nreq.params = any_trainable({prefix + ".norm.weight", prefix + ".norm.bias"});
      nn::LayerNormGrads<T> ng =
          nn::channel_layer_norm_backward(st.norm, p(prefix + ".norm.weight"), g, nreq);
      keep(prefix + ".norm.weight", std::move(ng.dgamma));
      keep(prefix + ".norm.bias", std::move(ng.dbeta));
      nn::GradRequest dreq;
      dreq.input = s > 0 || backbone_needed;
      dreq.params = any_trainable({prefix + ".weight", prefix + ".bias"});
      nn::ConvGrads<T> dg = nn::conv_transpose2d_backward(st.deconv, p(prefix + ".weight"), ng.dx, dreq);
      keep(prefix + ".weight", std::move(dg.dk));
      keep(prefix + ".bias", std::move(dg.db));
      g = std::move(dg.dx);
    }
    if (!backbone_needed) return;

    BasicTensor<T> gx = nn::transpose(g.reshaped({cfg.embed_dim, cfg.tokens()}));
    nn::GradRequest fnreq;
    fnreq.params = any_trainable({"norm.weight", "norm.bias"});
    nn::LayerNormGrads<T> fg = nn::layer_norm_backward(norm, p("norm.weight"), gx, fnreq);
    keep("norm.weight", std::move(fg.dgamma));
    keep("norm.bias", std::move(fg.dbeta));
    gx = std::move(fg.dx);

    for (std::size_t i = cfg.depth; i-- > 0;) {
      BlockState<T>& b = blocks[i];
      const std::string fc1 = block_name(i, "mlp.fc1");
      const std::string fc2 = block_name(i, "mlp.fc2");
      nn::LinearGrads<T> g2 =
          nn::linear_backward<T>(b.fc2, p(fc2 + ".weight"), gx, std::nullopt, linear_request(fc2, true));
      keep_linear(fc2, g2);
      BasicTensor<T> gh = nn::gelu_backward(b.act, g2.dx);
      nn::LinearGrads<T> g1 =
          nn::linear_backward<T>(b.fc1, p(fc1 + ".weight"), gh, std::nullopt, linear_request(fc1, true));
      keep_linear(fc1, g1);
      const std::string n2 = block_name(i, "norm2");
      nn::GradRequest n2req;
      n2req.params = any_trainable({n2 + ".weight", n2 + ".bias"});
      nn::LayerNormGrads<T> ln2 = nn::layer_norm_backward(b.norm2, p(n2 + ".weight"), g1.dx, n2req);
      keep(n2 + ".weight", std::move(ln2.dgamma));
      keep(n2 + ".bias", std::move(ln2.dbeta));
      nn::add_inplace(gx, ln2.dx);

      const std::string qkv = block_name(i, "attn.qkv");
      const std::string proj = block_name(i, "attn.proj");
      nn::GradRequest areq = linear_request(qkv, true);
      const nn::GradRequest preq = linear_request(proj, true);
      areq.params = areq.params || preq.params;
      areq.adapter = areq.adapter || preq.adapter;
      nn::AttentionGrads<T> ag = nn::multi_head_attention_backward(b.attn, attention(i), gx, areq);
      keep_linear(qkv, ag.qkv);
      keep_linear(proj, ag.proj);
      const std::string n1 = block_name(i, "norm1");
      nn::GradRequest n1req;
      n1req.params = any_trainable({n1 + ".weight", n1 + ".bias"});
      nn::LayerNormGrads<T> ln1 = nn::layer_norm_backward(b.norm1, p(n1 + ".weight"), ag.dx, n1req);
      keep(n1 + ".weight", std::move(ln1.dgamma));
      keep(n1 + ".bias", std::move(ln1.dbeta));
      nn::add_inplace(gx, ln1.dx);
    }

    if (m.is_trainable("pos_embed")) grads["pos_embed"] = gx;
    nn::GradRequest preq = linear_request("patch_embed", false);
    if (preq.params) {
      nn::LinearGrads<T> pg = nn::patch_embed_backward(patch, p("patch_embed.weight"), gx, preq);
      keep_linear("patch_embed", pg);
    }
  }
};

}  // namespace

template <typename T>
BasicTensor<T> forward(const Model<T>& m, const BasicTensor<T>& image, const std::string& dataset) {
  Pass<T> pass(m, false);
  return pass.run(image, dataset);
}

template <typename T>
LossAndGrads<T> loss_and_grads(const Model<T>& m, const BasicTensor<T>& image,
                               const BasicTensor<T>& target, std::span<const float> weights,
                               const std::string& dataset) {
  Pass<T> pass(m, true);
  const BasicTensor<T> pred = pass.run(image, dataset);
  LossAndGrads<T> out;
  out.loss = keypoint_mse(pred, target, weights);
  pass.backward(keypoint_mse_grad(pred, target, weights), dataset);
  out.grads = std::move(pass.grads);
  return out;
}

template <typename T>
LossAndGrads<T> batch_loss_and_grads(const Model<T>& m, std::span<const BasicTensor<T>> images,
                                     std::span<const BasicTensor<T>> targets,
                                     std::span<const std::vector<float>> weights,
                                     const std::string& dataset) {
  const std::size_t n = images.size();
  if (n == 0 || targets.size() != n || weights.size() != n) {
    fail(ErrorKind::kShape, "batch needs equal, nonzero numbers of images, targets and weights");
  }
  std::vector<LossAndGrads<T>> parts(n);
  parallel_for(n, [&](std::size_t i) {
    parts[i] = loss_and_grads(m, images[i], targets[i], weights[i], dataset);
  });
  LossAndGrads<T> out = std::move(parts[0]);
  for (std::size_t i = 1; i < n; ++i) {
    out.loss += parts[i].loss;
    for (auto& [name, g] : out.grads) nn::add_inplace(g, parts[i].grads.at(name));
  }
  const T inv = static_cast<T>(1.0 / static_cast<double>(n));
  out.loss /= static_cast<double>(n);
  for (auto& [name, g] : out.grads) {
    for (T& v : g.values()) v *= inv;
  }
  return out;
}

// ---------------------------------------------------------------------------
// LoRA and trainability

template <typename T>
void lora_inject(Model<T>& m, const LoraConfig& lc, std::uint64_t seed) {
  validate_lora(lc);
  if (m.lora) fail(ErrorKind::kValidation, "model already carries LoRA adapters");
  const std::size_t d = m.config.embed_dim;
  for (std::size_t i = 0; i < m.config.depth; ++i) {
    auto attach = [&](const char* site, std::size_t dout) {
      const std::string prefix = block_name(i, site);
      m.params[prefix + ".lora_A"] = plain_normal<T>({lc.rank, d}, seed, prefix + ".lora_A");
      m.params[prefix + ".lora_B"] = BasicTensor<T>({dout, lc.rank});
    };
    if (lc.qkv) attach("attn.qkv", 3 * d);
    if (lc.proj) attach("attn.proj", d);
  }
  m.lora = lc;
  set_trainable(m, TrainMode::kLoraOnly);
}

template <typename T>
void lora_merge(Model<T>& m) {
  if (!m.lora) fail(ErrorKind::kValidation, "model has no LoRA adapters to merge");
  const T scale = static_cast<T>(m.lora->scale());
  std::vector<std::string> adapters;
  for (auto& [name, t] : m.params) {
    if (!name.ends_with(".lora_A")) continue;
    const std::string site = name.substr(0, name.size() - 7);
    BasicTensor<T> delta = nn::matmul(m.param(site + ".lora_B"), t);
    BasicTensor<T>& w = m.param(site + ".weight");
    for (std::size_t k = 0; k < w.numel(); ++k) w[k] += scale * delta[k];
    adapters.push_back(name);
    adapters.push_back(site + ".lora_B");
  }
  for (const auto& name : adapters) {
    m.params.erase(name);
    m.trainable.erase(name);
  }
  m.lora.reset();
}

template <typename T>
void set_trainable(Model<T>& m, TrainMode mode) {
  if (mode == TrainMode::kLoraOnly && !m.lora) {
    fail(ErrorKind::kValidation, "lora_only training requires injected adapters");
  }
  m.trainable.clear();
  for (const auto& [name, t] : m.params) {
    const bool head = starts_with(name, "head.");
    const bool take = mode == TrainMode::kFull || head || (mode == TrainMode::kLoraOnly && is_adapter(name));
    if (take) m.trainable.insert(name);
  }
}

template <typename T>
BasicTensor<T> resize_pos_embed(const BasicTensor<T>& table, std::size_t gh, std::size_t gw,
                                std::size_t nh, std::size_t nw) {
  if (table.rank() != 2 || table.dim(0) != gh * gw || nh == 0 || nw == 0) {
    fail(ErrorKind::kShape, "position table " + shape_string(table.shape()) +
                                " does not match a " + std::to_string(gh) + "x" +
                                std::to_string(gw) + " grid");
  }
  const std::size_t d = table.dim(1);
  BasicTensor<T> out({nh * nw, d});
  auto axis = [](std::size_t i, std::size_t src, std::size_t dst) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(src) / static_cast<double>(dst) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const std::size_t lo = static_cast<std::size_t>(std::floor(s));
    const std::size_t hi = std::min(lo + 1, src - 1);
    return std::tuple{lo, hi, s - static_cast<double>(lo)};
  };
  for (std::size_t r = 0; r < nh; ++r) {
    const auto [y0, y1, wy] = axis(r, gh, nh);
    for (std::size_t c = 0; c < nw; ++c) {
      const auto [x0, x1, wx] = axis(c, gw, nw);
      for (std::size_t k = 0; k < d; ++k) {
        const double v00 = table[(y0 * gw + x0) * d + k];
        const double v01 = table[(y0 * gw + x1) * d + k];
        const double v10 = table[(y1 * gw + x0) * d + k];
        const double v11 = table[(y1 * gw + x1) * d + k];
        const double top = v00 + wx * (v01 - v00);
        const double bottom = v10 + wx * (v11 - v10);
        out[(r * nw + c) * d + k] = static_cast<T>(top + wy * (bottom - top));
      }
    }
  }
  return out;
}

#define MEDPOSE_INSTANTIATE_MODEL(T)                                                              \
  template struct Model<T>;                                                                       \
  template Model<T> build_model<T>(const ModelConfig&, std::uint64_t);                            \
  template void add_dataset_head<T>(Model<T>&, const DatasetHead&, std::uint64_t);                \
  template BasicTensor<T> forward<T>(const Model<T>&, const BasicTensor<T>&, const std::string&); \
  template LossAndGrads<T> loss_and_grads<T>(const Model<T>&, const BasicTensor<T>&,              \
                                             const BasicTensor<T>&, std::span<const float>,       \
                                             const std::string&);                                 \
  template LossAndGrads<T> batch_loss_and_grads<T>(                                               \
      const Model<T>&, std::span<const BasicTensor<T>>, std::span<const BasicTensor<T>>,          \
      std::span<const std::vector<float>>, const std::string&);                                   \
  template void lora_inject<T>(Model<T>&, const LoraConfig&, std::uint64_t);                      \
  template void lora_merge<T>(Model<T>&);                                                         \
  template void set_trainable<T>(Model<T>&, TrainMode);                                           \
  template BasicTensor<T> resize_pos_embed<T>(const BasicTensor<T>&, std::size_t, std::size_t,    \
                                              std::size_t, std::size_t);

MEDPOSE_INSTANTIATE_MODEL(float)
MEDPOSE_INSTANTIATE_MODEL(double)

#undef MEDPOSE_INSTANTIATE_MODEL

}  // namespace medpose
