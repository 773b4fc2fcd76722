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

#include "medpose/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "medpose/checkpoint.hpp"
#include "medpose/error.hpp"
#include "medpose/image.hpp"
#include "medpose/io.hpp"
#include "medpose/manifest.hpp"
#include "medpose/metrics.hpp"
#include "medpose/run_config.hpp"
#include "medpose/synth.hpp"

namespace medpose {

namespace fs = std::filesystem;
using nlohmann::json;

std::string error_json(int code, const std::string& kind, const std::string& message,
                       const std::string& subject) {
  json j;
  j["error"] = {{"code", code}, {"kind", kind}, {"message", message}, {"subject", subject}};
  return j.dump();
}

namespace {

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::kIo, "cannot create directory " + dir.string() + ": " + ec.message(), dir.string());
}

void require_file(const fs::path& p) {
  if (!fs::exists(p)) fail(ErrorKind::kConfig, "path does not exist: " + p.string(), p.string());
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  require_file(a.config);
  const RunConfig rc = load_run_config(a.config, a.overrides);

  TrainConfig tc;
  tc.seed = rc.seed;
  tc.output_dir = rc.output_dir;
  tc.base_checkpoint = rc.base_checkpoint;
  tc.lora = rc.lora;
  tc.augment = rc.augment;
  tc.optimizer = rc.optimizer;
  tc.gaussian = rc.heatmap;
  tc.batch_size = rc.batch_size;
  tc.steps_per_epoch = rc.steps_per_epoch;
  tc.trainable = rc.trainable.value_or(rc.lora ? TrainMode::kLoraOnly : TrainMode::kFull);

  std::vector<DatasetManifest> train_manifests;
  for (const auto& p : rc.datasets) train_manifests.push_back(load_manifest(p));
  std::vector<DatasetManifest> val_manifests;
  for (const auto& p : rc.val_datasets) val_manifests.push_back(load_manifest(p));

  json split_record;
  if (rc.mode == RunMode::kFewShot) {
    auto [train_part, test_part] = few_shot_split(train_manifests.front(), rc.few_shot_patients, rc.few_shot_seed);
    auto patients = [](const DatasetManifest& m) {
      std::set<std::string> ids;
      for (const auto& e : m.images) ids.insert(e.patient_id);
      return json(std::vector<std::string>(ids.begin(), ids.end()));
    };
    split_record = {{"train_patients", patients(train_part)}, {"test_patients", patients(test_part)}};
    train_manifests = {std::move(train_part)};
    if (val_manifests.empty()) val_manifests.push_back(std::move(test_part));
  }

  if (rc.base_checkpoint) {
    const ModelConfig base = load_checkpoint(*rc.base_checkpoint).model.config;
    tc.model = rc.model_given ? rc.model : base;
    if (rc.model_given) {
      ModelConfig same = rc.model;
      same.input_height = base.input_height;
      same.input_width = base.input_width;
      same.dataset_heads = base.dataset_heads;
      if (!(same == base)) {
        fail(ErrorKind::kConfig, "model config differs from the base checkpoint beyond input size",
             rc.base_checkpoint->string());
      }
    }
  } else {
    tc.model = rc.model;
    for (const auto& m : train_manifests) {
      if (!tc.model.find_head(m.name)) tc.model.dataset_heads.push_back({m.name, m.landmark_count});
    }
  }

  for (const auto& m : train_manifests) tc.train.push_back(load_dataset(m));
  for (const auto& m : val_manifests) tc.val.push_back(load_dataset(m));

  std::size_t images = 0;
  for (const auto& d : tc.train) images += d.images.size();
  const std::size_t per_epoch =
      rc.steps_per_epoch > 0 ? rc.steps_per_epoch : (images + rc.batch_size - 1) / rc.batch_size;
  if (rc.steps) tc.steps = *rc.steps;
  else if (rc.epochs) tc.steps = *rc.epochs * per_epoch;
  else fail(ErrorKind::kConfig, "set optimizer.steps or optimizer.epochs", "optimizer");

  make_dirs(rc.output_dir);
  json snapshot = run_config_to_json(rc);
  snapshot["model"] = tc.model;
  snapshot["trainable"] = to_string(tc.trainable);
  snapshot["optimizer"]["steps"] = tc.steps;
  if (!split_record.is_null()) snapshot["few_shot"]["split"] = split_record;
  write_file_atomic(rc.output_dir / "config.json", snapshot.dump(2) + "\n");

  const TrainResult res = train(tc);
  const double last_loss = res.history.step_loss.empty() ? 0.0 : res.history.step_loss.back();
  out << fmt::format("trained {} steps ({} mode, {} trainable parameters); final loss {:.6g}\n", tc.steps,
                     to_string(rc.mode), [&] {
                       std::size_t n = 0;
                       for (const auto& name : res.model.trainable) n += res.model.param(name).numel();
                       return n;
                     }(),
                     last_loss);
  if (res.best_epoch) {
    for (const auto& e : res.history.epochs) {
      if (e.epoch == *res.best_epoch) out << fmt::format("epoch {} {} mre {:.4f}\n", e.epoch, e.split, e.mre);
    }
  }
  out << "wrote " << (rc.output_dir / "best.ckpt").string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  std::string manifest;
  std::vector<double> thresholds;
  std::string head;
  std::string out_dir = "eval";
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  require_file(a.checkpoint);
  require_file(a.manifest);
  const DatasetManifest manifest = load_manifest(a.manifest);
  const FloatModel model = load_checkpoint(a.checkpoint).model;
  const Dataset data = load_dataset(manifest);
  std::optional<std::string> head;
  if (!a.head.empty()) head = a.head;
  std::optional<std::vector<double>> thresholds;
  if (!a.thresholds.empty()) thresholds = a.thresholds;
  const MetricsReport r = evaluate(model, data, head, thresholds);
  const fs::path dir(a.out_dir);
  make_dirs(dir);
  emit_report(r, dir / "report.json", ReportFormat::kJson);
  emit_report(r, dir / "report.txt", ReportFormat::kText);
  emit_report(r, dir / "report.csv", ReportFormat::kCsv);
  out << format_report(r, ReportFormat::kText);
  return 0;
}

// ---------------------------------------------------------------------------
// predict

struct PredictArgs {
  std::string checkpoint;
  std::string image;
  std::string dataset;
  std::string gt;
  std::string out_dir = "predict";
  bool dump_heatmaps = false;
};

const ManifestEntry* find_entry(const DatasetManifest& m, const fs::path& image) {
  std::error_code ec;
  for (const auto& e : m.images) {
    const fs::path p = fs::path(e.image.path).is_absolute() ? fs::path(e.image.path) : m.base_dir / e.image.path;
    if (fs::equivalent(p, image, ec)) return &e;
  }
  return nullptr;
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  require_file(a.checkpoint);
  const FloatModel model = load_checkpoint(a.checkpoint).model;
  const GrayImage img = read_png(a.image);
  const std::string head = a.dataset;

  std::optional<ManifestEntry> gt;
  if (!a.gt.empty()) {
    require_file(a.gt);
    const DatasetManifest m = load_manifest(a.gt);
    const ManifestEntry* e = find_entry(m, a.image);
    if (!e) fail(ErrorKind::kValidation, "image is not listed in " + a.gt, a.image);
    gt = *e;
  }

  ImageSpec spec = gt ? gt->image : ImageSpec{};
  spec.path = a.image;
  spec.width = img.width;
  spec.height = img.height;

  std::optional<HeatmapStack> captured;
  const HeatmapPredictor base = model_predictor(model, head);
  const HeatmapPredictor predictor = [&](const Tensor& input) {
    captured = base(input);
    return *captured;
  };
  const DecodedLandmarks d = predict_landmarks(predictor, model.config, img, spec);

  const fs::path dir(a.out_dir);
  make_dirs(dir);
  json doc;
  doc["dataset"] = head;
  doc["image"] = a.image;
  doc["width"] = img.width;
  doc["height"] = img.height;
  doc["landmarks"] = json::array();
  for (std::size_t i = 0; i < d.landmarks.size(); ++i) {
    doc["landmarks"].push_back(
        {{"x", d.landmarks.point(i).x}, {"y", d.landmarks.point(i).y}, {"confidence", d.confidence[i]}});
  }
  if (gt) {
    if (gt->landmarks.size() != d.landmarks.size()) {
      fail(ErrorKind::kValidation,
           fmt::format("head predicts {} landmarks, ground truth has {}", d.landmarks.size(), gt->landmarks.size()));
    }
    const RadialErrors errs = radial_errors(d.landmarks, gt->landmarks, effective_spacing(spec, gt->landmarks));
    doc["unit"] = to_string(errs.unit);
    doc["radial_errors"] = json::array();
    for (std::size_t i = 0; i < errs.values.size(); ++i) {
      doc["radial_errors"].push_back(errs.evaluated[i] ? json(errs.values[i]) : json(nullptr));
    }
  }
  write_file_atomic(dir / "landmarks.json", doc.dump(2) + "\n");

  RgbImage overlay = to_rgb(img);
  const double r = std::max(1.5, std::min(img.width, img.height) / 100.0);
  if (gt) {
    // GT is drawn larger so it stays visible under a coincident prediction.
    for (std::size_t i = 0; i < gt->landmarks.size(); ++i) {
      if (!gt->landmarks.visible(i)) continue;
      draw_disk(overlay, gt->landmarks.point(i).x, gt->landmarks.point(i).y, 1.8 * r, Rgb{0, 255, 0});
    }
  }
  for (const Point2& p : d.landmarks.points()) draw_disk(overlay, p.x, p.y, r, Rgb{255, 0, 0});
  write_png_rgb(dir / "overlay.png", overlay);

  if (a.dump_heatmaps && captured) {
    const Tensor& t = captured->data;
    const std::size_t rows = t.shape()[1], cols = t.shape()[2];
    for (std::size_t c = 0; c < t.shape()[0]; ++c) {
      GrayImage g(static_cast<int>(cols), static_cast<int>(rows));
      for (std::size_t i = 0; i < rows * cols; ++i) {
        g.pixels[i] = std::clamp(t.data()[c * rows * cols + i], 0.0f, 1.0f);
      }
      write_png_gray8(dir / fmt::format("heatmap_{:02d}.png", c), g);
    }
  }
  out << doc["landmarks"].dump() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  SynthOptions options;
  std::string size = "64x64";
  std::string out_dir;
};

std::pair<int, int> parse_size(const std::string& text) {
  int h = 0, w = 0;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%dx%d%c", &h, &w, &tail) == 2 && h > 0 && w > 0) return {h, w};
  if (std::sscanf(text.c_str(), "%d%c", &h, &tail) == 1 && h > 0) return {h, h};
  fail(ErrorKind::kConfig, "size must look like HxW or N, got '" + text + "'", "size");
}

int cmd_synth(SynthArgs a, std::ostream& out) {
  std::tie(a.options.height, a.options.width) = parse_size(a.size);
  const SynthDataset ds = synth_generate(a.options);
  write_synth_dataset(ds, a.out_dir);
  out << fmt::format("wrote {} images with {} landmarks to {}\n", ds.images.size(), a.options.landmarks,
                     a.out_dir);
  return 0;
}

// ---------------------------------------------------------------------------
// report

struct ReportArgs {
  std::vector<std::string> histories;
  std::vector<std::string> names;
  std::string out = "convergence.svg";
};

struct Curve {
  std::string split;
  std::vector<std::pair<double, double>> points;  // (epoch, mre)
};

Curve select_curve(const TrainHistory& h) {
  const bool has_val = std::any_of(h.epochs.begin(), h.epochs.end(), [](const EpochRecord& e) { return e.split == "val"; });
  Curve c{has_val ? "val" : "train", {}};
  for (const auto& e : h.epochs) {
    if (e.split == c.split) c.points.emplace_back(static_cast<double>(e.epoch), e.mre);
  }
  return c;
}

std::string xml_escape(const std::string& s) {
  std::string o;
  for (char ch : s) {
    switch (ch) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += ch;
    }
  }
  return o;
}

int cmd_report(const ReportArgs& a, std::ostream& out) {
  if (!a.names.empty() && a.names.size() != a.histories.size()) {
    fail(ErrorKind::kConfig, fmt::format("{} names given for {} histories", a.names.size(), a.histories.size()),
         "names");
  }
  std::vector<NamedHistory> runs;
  for (std::size_t i = 0; i < a.histories.size(); ++i) {
    const fs::path p(a.histories[i]);
    require_file(p);
    NamedHistory run;
    run.name = a.names.empty() ? p.parent_path().filename().string() : a.names[i];
    if (run.name.empty()) run.name = p.stem().string();
    try {
      run.history = history_from_csv(read_text_file(p));
    } catch (const Error& e) {
      fail(e.kind(), p.string() + ": " + e.what(), p.string());
    }
    if (select_curve(run.history).points.empty()) {
      fail(ErrorKind::kValidation, p.string() + " has no epoch rows", p.string());
    }
    runs.push_back(std::move(run));
  }
  write_file_atomic(a.out, render_convergence_svg(runs));
  for (const auto& run : runs) {
    const Curve c = select_curve(run.history);
    const auto best = std::min_element(c.points.begin(), c.points.end(),
                                       [](const auto& x, const auto& y) { return x.second < y.second; });
    out << fmt::format("{}: final epoch {:g} {} mre {:.4f}; best epoch {:g} mre {:.4f}\n", run.name,
                       c.points.back().first, c.split, c.points.back().second, best->first, best->second);
  }
  return 0;
}

}  // namespace

std::string render_convergence_svg(const std::vector<NamedHistory>& runs) {
  static const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  constexpr double kW = 640, kH = 400, kL = 60, kR = 20, kT = 20, kB = 50;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y1 = 0.0;
  std::vector<Curve> curves;
  for (const auto& r : runs) {
    curves.push_back(select_curve(r.history));
    for (const auto& [x, y] : curves.back().points) {
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1;
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= 0) y1 = 1;
  y1 *= 1.05;
  auto sx = [&](double x) { return kL + (x - x0) / (x1 - x0) * (kW - kL - kR); };
  auto sy = [&](double y) { return kH - kB - y / y1 * (kH - kT - kB); };

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n"
      "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      kW, kH, kW, kH);
  s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", kL, kH - kB, kW - kR);
  s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", kL, kT, kH - kB);
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0, yv = y1 * i / 4.0;
    s += fmt::format("<text x=\"{:.1f}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{:.3g}</text>\n", sx(xv),
                     kH - kB + 15, xv);
    s += fmt::format("<text x=\"{}\" y=\"{:.1f}\" font-size=\"11\" text-anchor=\"end\">{:.3g}</text>\n", kL - 5,
                     sy(yv) + 4, yv);
  }
  s += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">epoch</text>\n",
                   (kL + kW - kR) / 2, kH - 12);
  s += fmt::format(
      "<text x=\"14\" y=\"{0}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {0})\">MRE</text>\n",
      (kT + kH - kB) / 2);
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const char* color = kColors[i % std::size(kColors)];
    std::string pts;
    for (const auto& [x, y] : curves[i].points) pts += fmt::format("{:.2f},{:.2f} ", sx(x), sy(y));
    s += fmt::format("<polyline class=\"curve\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
                     color, pts);
    const double ly = kT + 14.0 * static_cast<double>(i) + 6;
    s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
                     kW - kR - 150, ly, kW - kR - 130, color);
    s += fmt::format("<text class=\"legend\" x=\"{}\" y=\"{}\" font-size=\"11\">{} ({})</text>\n", kW - kR - 125,
                     ly + 4, xml_escape(runs[i].name), curves[i].split);
  }
  s += "</svg>\n";
  return s;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Landmark detection with a ViT backbone and heatmap heads"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train from a run config");
  train_cmd->add_option("--config", train_args.config, "Run config JSON")->required();
  train_cmd->add_option("--set", train_args.overrides, "Override a config key: dotted.key=value");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required();
  eval_cmd->add_option("--manifest", eval_args.manifest)->required();
  eval_cmd->add_option("--thresholds", eval_args.thresholds, "SDR thresholds in the manifest unit");
  eval_cmd->add_option("--head", eval_args.head, "Dataset head (defaults to the manifest name)");
  eval_cmd->add_option("--out", eval_args.out_dir, "Directory for report.{json,txt,csv}");

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "Predict landmarks on one image");
  predict_cmd->add_option("--checkpoint", predict_args.checkpoint)->required();
  predict_cmd->add_option("--image", predict_args.image)->required();
  predict_cmd->add_option("--dataset", predict_args.dataset, "Dataset head")->required();
  predict_cmd->add_option("--gt", predict_args.gt, "Manifest listing the image, for ground truth");
  predict_cmd->add_option("--out", predict_args.out_dir, "Directory for landmarks.json and overlay.png");
  predict_cmd->add_flag("--dump-heatmaps", predict_args.dump_heatmaps, "Also write one PNG per heatmap channel");

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth_cmd->add_option("--seed", synth_args.options.seed);
  synth_cmd->add_option("--count", synth_args.options.count)->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--landmarks", synth_args.options.landmarks)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--size", synth_args.size, "HxW or N");
  synth_cmd->add_option("--patients", synth_args.options.patients, "0: one patient per image")
      ->check(CLI::NonNegativeNumber);
  synth_cmd->add_option("--name", synth_args.options.name);
  synth_cmd->add_option("--out", synth_args.out_dir)->required();

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "Plot convergence curves from history CSVs");
  report_cmd->add_option("--history", report_args.histories)->required();
  report_cmd->add_option("--names", report_args.names, "Legend names, one per history");
  report_cmd->add_option("--out", report_args.out, "SVG output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ? app.help() : e.what()) << "\n";
      return 0;
    }
    err << error_json(2, "usage", e.what(), "") << "\n";
    return 2;
  }

  try {
    if (*train_cmd) return cmd_train(train_args, out);
    if (*eval_cmd) return cmd_eval(eval_args, out);
    if (*predict_cmd) return cmd_predict(predict_args, out);
    if (*synth_cmd) return cmd_synth(synth_args, out);
    if (*report_cmd) return cmd_report(report_args, out);
  } catch (const Error& e) {
    const int code = exit_code(e.kind());
    err << error_json(code, to_string(e.kind()), e.what(), e.subject()) << "\n";
    return code;
  } catch (const std::exception& e) {
    err << error_json(3, "internal", e.what(), "") << "\n";
    return 3;
  }
  return 2;
}

}  // namespace medpose
