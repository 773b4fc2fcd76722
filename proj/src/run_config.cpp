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

#include "medpose/run_config.hpp"

#include <fmt/format.h>

#include "medpose/error.hpp"
#include "medpose/io.hpp"

namespace medpose {

const char* to_string(RunMode mode) noexcept {
  switch (mode) {
    case RunMode::kGeneralist: return "generalist";
    case RunMode::kSpecialist: return "specialist";
    case RunMode::kFewShot: return "few_shot";
  }
  return "?";
}

namespace {

using nlohmann::json;

void only_keys(const json& j, std::initializer_list<std::string_view> known, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::kConfig, where + " must be a JSON object", where);
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      fail(ErrorKind::kConfig, fmt::format("unknown key '{}' in {}", key, where), key);
    }
  }
}

template <typename V>
void take(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    j.at(key).get_to(out);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, fmt::format("bad value for {}.{}: {}", where, key, e.what()), key);
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

std::vector<std::filesystem::path> path_list(const json& j, const char* key,
                                             const std::filesystem::path& base) {
  std::vector<std::string> raw;
  take(j, key, raw, "run config");
  std::vector<std::filesystem::path> out;
  for (const auto& r : raw) out.push_back(resolve(base, r));
  return out;
}

AugmentConfig parse_augment(const json& j) {
  AugmentConfig a;
  only_keys(j, {"flip_prob", "photometric", "coarse_dropout"}, "augment");
  take(j, "flip_prob", a.flip_prob, "augment");
  if (j.contains("photometric")) {
    const json& p = j.at("photometric");
    only_keys(p, {"brightness_delta", "contrast_range", "prob"}, "augment.photometric");
    take(p, "brightness_delta", a.photometric.brightness_delta, "augment.photometric");
    take(p, "prob", a.photometric.prob, "augment.photometric");
    if (p.contains("contrast_range")) {
      std::vector<double> r;
      take(p, "contrast_range", r, "augment.photometric");
      if (r.size() != 2) fail(ErrorKind::kConfig, "contrast_range must be [low, high]", "contrast_range");
      a.photometric.contrast_low = r[0];
      a.photometric.contrast_high = r[1];
    }
  }
  if (j.contains("coarse_dropout")) {
    const json& d = j.at("coarse_dropout");
    only_keys(d, {"max_holes", "hole_size", "prob"}, "augment.coarse_dropout");
    take(d, "max_holes", a.coarse_dropout.max_holes, "augment.coarse_dropout");
    take(d, "prob", a.coarse_dropout.prob, "augment.coarse_dropout");
    if (d.contains("hole_size")) {
      std::vector<double> r;
      take(d, "hole_size", r, "augment.coarse_dropout");
      if (r.size() != 2) fail(ErrorKind::kConfig, "hole_size must be [min_fraction, max_fraction]", "hole_size");
      a.coarse_dropout.min_fraction = r[0];
      a.coarse_dropout.max_fraction = r[1];
    }
  }
  return a;
}

}  // namespace

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    fail(ErrorKind::kConfig, "override '" + assignment + "' must look like key.path=value", assignment);
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) fail(ErrorKind::kConfig, "override key '" + key + "' has an empty component", key);
    if (!node->is_object()) {
      if (!node->is_null()) fail(ErrorKind::kConfig, "override key '" + key + "' descends into a non-object", key);
      *node = json::object();
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

RunConfig parse_run_config(const json& doc, const std::filesystem::path& base) {
  only_keys(doc,
            {"mode", "seed", "output_dir", "datasets", "val_datasets", "base_checkpoint", "model", "lora",
             "trainable", "augment", "optimizer", "heatmap", "few_shot"},
            "run config");
  RunConfig c;
  if (doc.contains("mode")) {
    std::string mode;
    take(doc, "mode", mode, "run config");
    if (mode == "generalist") c.mode = RunMode::kGeneralist;
    else if (mode == "specialist") c.mode = RunMode::kSpecialist;
    else if (mode == "few_shot") c.mode = RunMode::kFewShot;
    else fail(ErrorKind::kConfig, "unknown mode '" + mode + "'", "mode");
  }
  take(doc, "seed", c.seed, "run config");
  if (doc.contains("output_dir")) {
    std::string out;
    take(doc, "output_dir", out, "run config");
    c.output_dir = resolve(base, out);
  } else {
    c.output_dir = resolve(base, "run");
  }
  c.datasets = path_list(doc, "datasets", base);
  c.val_datasets = path_list(doc, "val_datasets", base);
  if (doc.contains("base_checkpoint") && !doc.at("base_checkpoint").is_null()) {
    std::string p;
    take(doc, "base_checkpoint", p, "run config");
    c.base_checkpoint = resolve(base, p);
  }
  if (doc.contains("model") && !doc.at("model").is_null()) {
    c.model = doc.at("model").get<ModelConfig>();
    c.model_given = true;
  }
  if (doc.contains("lora") && !doc.at("lora").is_null()) c.lora = doc.at("lora").get<LoraConfig>();
  if (doc.contains("trainable") && !doc.at("trainable").is_null()) {
    std::string t;
    take(doc, "trainable", t, "run config");
    c.trainable = parse_train_mode(t);
  }
  if (doc.contains("augment")) c.augment = parse_augment(doc.at("augment"));
  if (doc.contains("optimizer")) {
    const json& o = doc.at("optimizer");
    only_keys(o, {"base_lr", "decay", "betas", "eps", "weight_decay", "batch_size", "steps", "epochs",
                  "steps_per_epoch"},
              "optimizer");
    take(o, "base_lr", c.optimizer.base_lr, "optimizer");
    take(o, "decay", c.optimizer.layer_decay, "optimizer");
    take(o, "eps", c.optimizer.eps, "optimizer");
    take(o, "weight_decay", c.optimizer.weight_decay, "optimizer");
    take(o, "batch_size", c.batch_size, "optimizer");
    take(o, "steps_per_epoch", c.steps_per_epoch, "optimizer");
    if (o.contains("betas")) {
      std::vector<double> b;
      take(o, "betas", b, "optimizer");
      if (b.size() != 2) fail(ErrorKind::kConfig, "betas must be [beta1, beta2]", "betas");
      c.optimizer.beta1 = b[0];
      c.optimizer.beta2 = b[1];
    }
    if (o.contains("steps") && !o.at("steps").is_null()) {
      std::size_t s = 0;
      take(o, "steps", s, "optimizer");
      c.steps = s;
    }
    if (o.contains("epochs") && !o.at("epochs").is_null()) {
      std::size_t e = 0;
      take(o, "epochs", e, "optimizer");
      c.epochs = e;
    }
  }
  if (doc.contains("heatmap")) {
    only_keys(doc.at("heatmap"), {"sigma"}, "heatmap");
    take(doc.at("heatmap"), "sigma", c.heatmap.sigma, "heatmap");
  }
  if (doc.contains("few_shot")) {
    only_keys(doc.at("few_shot"), {"k_patients", "seed"}, "few_shot");
    take(doc.at("few_shot"), "k_patients", c.few_shot_patients, "few_shot");
    take(doc.at("few_shot"), "seed", c.few_shot_seed, "few_shot");
  }
  return c;
}

json run_config_to_json(const RunConfig& c) {
  auto paths = [](const std::vector<std::filesystem::path>& ps) {
    json a = json::array();
    for (const auto& p : ps) a.push_back(p.string());
    return a;
  };
  json doc;
  doc["mode"] = to_string(c.mode);
  doc["seed"] = c.seed;
  doc["output_dir"] = c.output_dir.string();
  doc["datasets"] = paths(c.datasets);
  doc["val_datasets"] = paths(c.val_datasets);
  doc["base_checkpoint"] = c.base_checkpoint ? json(c.base_checkpoint->string()) : json(nullptr);
  doc["model"] = c.model_given ? json(c.model) : json(nullptr);
  doc["lora"] = c.lora ? json(*c.lora) : json(nullptr);
  doc["trainable"] = c.trainable ? json(to_string(*c.trainable)) : json(nullptr);
  doc["augment"] = {
      {"flip_prob", c.augment.flip_prob},
      {"photometric",
       {{"brightness_delta", c.augment.photometric.brightness_delta},
        {"contrast_range", {c.augment.photometric.contrast_low, c.augment.photometric.contrast_high}},
        {"prob", c.augment.photometric.prob}}},
      {"coarse_dropout",
       {{"max_holes", c.augment.coarse_dropout.max_holes},
        {"hole_size", {c.augment.coarse_dropout.min_fraction, c.augment.coarse_dropout.max_fraction}},
        {"prob", c.augment.coarse_dropout.prob}}}};
  doc["optimizer"] = {{"base_lr", c.optimizer.base_lr},
                      {"decay", c.optimizer.layer_decay},
                      {"betas", {c.optimizer.beta1, c.optimizer.beta2}},
                      {"eps", c.optimizer.eps},
                      {"weight_decay", c.optimizer.weight_decay},
                      {"batch_size", c.batch_size},
                      {"steps", c.steps ? json(*c.steps) : json(nullptr)},
                      {"epochs", c.epochs ? json(*c.epochs) : json(nullptr)},
                      {"steps_per_epoch", c.steps_per_epoch}};
  doc["heatmap"] = {{"sigma", c.heatmap.sigma}};
  doc["few_shot"] = {{"k_patients", c.few_shot_patients}, {"seed", c.few_shot_seed}};
  return doc;
}

void validate_run_config(const RunConfig& c) {
  if (c.datasets.empty()) fail(ErrorKind::kConfig, "run config lists no datasets", "datasets");
  if (c.mode != RunMode::kGeneralist && c.datasets.size() != 1) {
    fail(ErrorKind::kConfig, fmt::format("{} mode needs exactly one dataset", to_string(c.mode)), "datasets");
  }
  if (c.mode == RunMode::kSpecialist && !c.base_checkpoint) {
    fail(ErrorKind::kConfig, "specialist mode needs a base_checkpoint", "base_checkpoint");
  }
  if (c.steps && c.epochs) fail(ErrorKind::kConfig, "set either optimizer.steps or optimizer.epochs", "optimizer");
  if (c.batch_size < 1) fail(ErrorKind::kConfig, "batch_size must be at least 1", "batch_size");
  if (c.lora) validate_lora(*c.lora);
  validate_augment(c.augment);
  validate_adamw(c.optimizer);
  if (!(c.heatmap.sigma > 0.0)) fail(ErrorKind::kConfig, "heatmap sigma must be positive", "sigma");
  auto exists = [](const std::filesystem::path& p) {
    if (!std::filesystem::exists(p)) fail(ErrorKind::kConfig, "path does not exist: " + p.string(), p.string());
  };
  for (const auto& p : c.datasets) exists(p);
  for (const auto& p : c.val_datasets) exists(p);
  if (c.base_checkpoint) exists(*c.base_checkpoint);
}

RunConfig load_run_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json doc;
  try {
    doc = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::kParse, path.string() + ": " + e.what(), path.string());
  }
  for (const auto& o : overrides) apply_override(doc, o);
  RunConfig c;
  try {
    c = parse_run_config(doc, path.parent_path());
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, path.string() + ": " + e.what(), path.string());
  }
  validate_run_config(c);
  return c;
}

}  // namespace medpose
