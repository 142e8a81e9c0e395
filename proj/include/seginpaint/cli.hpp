// Copyright 2026 The seginpaint Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Command-line front end: prepare, train, eval, infer, serve.
//
// Exit codes: 0 success, 2 bad arguments or configuration, 3 bad or
// missing data, 4 runtime failure.

#ifndef SEGINPAINT_CLI_HPP
#define SEGINPAINT_CLI_HPP

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "seginpaint/config.hpp"
#include "seginpaint/data.hpp"
#include "seginpaint/errors.hpp"
#include "seginpaint/image_io.hpp"
#include "seginpaint/metrics.hpp"
#include "seginpaint/pipeline.hpp"
#include "seginpaint/service.hpp"
#include "seginpaint/training.hpp"

namespace seginpaint::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kData = 3, kRuntime = 4 };

inline constexpr const char* kCacheEnv = "SEG_INPAINT_CACHE";

/// Options shared by the configurable commands.
struct CommonOptions {
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> image_size;
  std::optional<double> width_scale;
  std::optional<std::string> data_root;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "INI configuration file");
    cmd->add_option("--override,-o", overrides, "key=value override (repeatable; section.key or unique key)");
    cmd->add_option("--seed", seed, "random seed");
    cmd->add_option("--image-size", image_size, "square working resolution (multiple of 16)");
    cmd->add_option("--width-scale", width_scale, "channel width multiplier");
    cmd->add_option("--data-root", data_root, "dataset root directory");
  }

  /// File, then --override values, then the dedicated flags.
  RunConfig resolve() const {
    std::vector<std::string> all = overrides;
    if (seed) all.push_back("train.seed=" + std::to_string(*seed));
    if (image_size) all.push_back("train.image_size=" + std::to_string(*image_size));
    if (width_scale) all.push_back("train.width_scale=" + detail::show(*width_scale));
    if (data_root) all.push_back("data.root=" + *data_root);
    return resolve_config(config, all);
  }
};

/// Explicit --checkpoint paths, else `$SEG_INPAINT_CACHE/model.ckpt`.
inline InpaintModel resolve_model(const std::vector<std::filesystem::path>& checkpoints, bool random_init,
                                  const RunConfig& cfg) {
  if (random_init) return random_model(cfg.train.class_names, cfg.train.width_scale, cfg.train.seed);
  if (!checkpoints.empty()) return load_model(checkpoints);
  if (const char* cache = std::getenv(kCacheEnv); cache && *cache) {
    const auto p = std::filesystem::path(cache) / "model.ckpt";
    if (std::filesystem::exists(p)) return load_model(p);
    throw IoError(std::string("no model.ckpt in ") + kCacheEnv + "=" + cache);
  }
  throw IoError(std::string("no model: pass --checkpoint, --random-init, or set ") + kCacheEnv);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

// ------------------------------------------------------------------ commands

/// Resizes every split of a raw dataset into `out` and fixes the test-split
/// hole masks so evaluations share them.
inline int cmd_prepare(const RunConfig& cfg, const std::filesystem::path& out, std::ostream& os) {
  namespace fs = std::filesystem;
  if (cfg.data_root.empty()) throw ConfigError("prepare needs --data-root");
  const CategoryMapping mapping = cfg.mapping();
  std::size_t total = 0;
  for (Split split : {Split::train, Split::test}) {
    if (!fs::is_directory(cfg.data_root / to_string(split) / "images")) continue;
    DirectoryDataset ds(cfg.data_root, split, mapping, cfg.train.image_size, cfg.train.seed, cfg.holes);
    const auto dir = out / to_string(split);
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const auto& e = ds.entries()[i];
      const Image image = io::read_image(e.image, cfg.train.image_size);
      const LabelMap raw = io::read_labels(e.labels, cfg.train.image_size);
      remap_labels(raw, mapping);  // rejects unmapped ids up front
      io::write_image(dir / "images" / (e.name + ".png"), image);
      io::write_labels(dir / "labels" / (e.name + ".png"), raw);
      if (split == Split::test) io::write_mask(dir / "masks" / (e.name + ".png"), ds.mask_for(i, 0, image.height(), image.width()));
      ++total;
    }
    os << to_string(split) << ": " << ds.size() << " samples\n";
  }
  if (total == 0) throw IoError("no samples under " + cfg.data_root.string());
  RunConfig echoed = cfg;
  echoed.data_root = out;
  write_text(out / "config.ini", to_ini(echoed));
  return kOk;
}

inline int cmd_train(const RunConfig& cfg, const std::filesystem::path& out,
                     const std::optional<std::filesystem::path>& resume,
                     const std::vector<std::filesystem::path>& init, std::ostream& os) {
  if (cfg.data_root.empty()) throw ConfigError("train needs --data-root (or data.root in the config)");
  DirectoryDataset ds(cfg.data_root, Split::train, cfg.mapping(), cfg.train.image_size, cfg.train.seed, cfg.holes);
  std::filesystem::create_directories(out);
  write_text(out / "config.ini", to_ini(cfg));

  std::optional<TrainState> start;
  if (resume) {
    start = load_checkpoint(*resume);
  } else if (!init.empty()) {
    start = make_train_state(cfg.train);
    for (const auto& p : init) import_networks(*start, read_archive(p));
  }
  std::ofstream log(out / "loss_log.txt", std::ios::app);
  if (!log) throw IoError("cannot open " + (out / "loss_log.txt").string());
  TrainHooks hooks;
  hooks.loss_log = &log;
  hooks.checkpoint_dir = out / "checkpoints";
  hooks.dump_dir = out / "diagnostics";
  hooks.on_step = [&os](const TrainState& st, const LossFields& f) {
    if (st.step % 10 == 0) {
      os << "step " << st.step << " epoch " << st.epoch;
      for (const auto& [k, v] : f) os << ' ' << k << '=' << v;
      os << '\n';
    }
  };
  const TrainState st = train_stage(cfg.train, ds, std::move(start), hooks);
  os << "finished at step " << st.step << ", checkpoint " << (out / "checkpoints" / "final.ckpt").string() << '\n';
  return kOk;
}

inline int cmd_eval(const std::filesystem::path& pred, const std::filesystem::path& gt,
                    const std::optional<std::filesystem::path>& masks, bool strict, std::ostream& os) {
  metrics::EvaluateOptions opt;
  opt.hole_masks = masks;
  const auto report = metrics::evaluate(pred, gt, opt);
  os << report.to_text();
  if (strict && !report.unpaired.empty()) return kData;
  return kOk;
}

struct InferOptions {
  std::optional<std::filesystem::path> image;
  std::optional<std::filesystem::path> mask;
  std::optional<std::filesystem::path> segmentation;
  std::optional<std::filesystem::path> labels;
  std::optional<std::filesystem::path> input_dir;
  std::vector<std::filesystem::path> checkpoints;
  std::string segmenter_command;
  bool random_init = false;
  bool remap = false;
};

inline int cmd_infer(const RunConfig& cfg, const InferOptions& o, const std::filesystem::path& out, std::ostream& os) {
  const InpaintModel model = resolve_model(o.checkpoints, o.random_init, cfg);
  std::optional<CategoryMapping> remap;
  if (o.remap) remap = cfg.mapping();
  if (o.input_dir) {
    const auto r = infer_directory(*o.input_dir, out, model, {remap});
    os << "wrote " << r.written.size() << " results, skipped " << r.skipped.size() << '\n';
    return kOk;
  }
  if (!o.image || !o.mask) throw ConfigError("infer needs --image and --mask, or --input-dir");
  const Image image = io::read_image(*o.image);
  const HoleMask mask = io::read_mask(*o.mask);
  std::optional<LabelMap> edits;
  if (o.labels) edits = io::read_labels(*o.labels);

  std::unique_ptr<Segmenter> seg;
  if (o.segmentation) {
    LabelMap l = io::read_labels(*o.segmentation);
    seg = std::make_unique<GroundTruthSegmenter>(remap ? remap_labels(l, *remap) : l);
  } else if (!o.segmenter_command.empty() || !cfg.serve.segmenter_command.empty()) {
    seg = std::make_unique<CommandSegmenter>(
        o.segmenter_command.empty() ? cfg.serve.segmenter_command : o.segmenter_command, out / ".segmenter", remap);
  } else if (edits) {
    // A full edited map doubles as the segmentation outside the hole.
    seg = std::make_unique<GroundTruthSegmenter>(*edits);
  } else {
    throw ConfigError("infer needs --segmentation, --segmenter-command or --labels");
  }
  const InpaintResult r = inpaint(image, mask, *seg, model, edits);
  const std::string stem = o.image->stem().string();
  io::write_labels(out / (stem + "_labels.png"), r.predicted_labels);
  io::write_mat(out / (stem + "_labels_color.png"), io::colorize(r.predicted_labels, io::make_palette(model.class_names)));
  io::write_image(out / (stem + "_inpainted.png"), r.image);
  os << "wrote " << (out / (stem + "_inpainted.png")).string() << '\n';
  return kOk;
}

inline int cmd_serve(const RunConfig& cfg, const std::vector<std::filesystem::path>& checkpoints, bool random_init,
                     std::ostream& os) {
  InpaintModel model = resolve_model(checkpoints, random_init, cfg);
  std::shared_ptr<const Segmenter> seg;
  if (!cfg.serve.segmenter_command.empty()) {
    seg = std::make_shared<CommandSegmenter>(cfg.serve.segmenter_command,
                                             std::filesystem::temp_directory_path() / "seginpaint-segmenter");
  }
  service::InpaintService svc(std::move(model), cfg.serve, seg);
  httplib::Server server;
  svc.mount(server);
  os << "listening on " << cfg.serve.host << ':' << cfg.serve.port << " (model " << svc.model_digest() << ")\n"
     << std::flush;
  if (!server.listen(cfg.serve.host, cfg.serve.port)) throw std::runtime_error("cannot listen on port " + std::to_string(cfg.serve.port));
  return kOk;
}

// ------------------------------------------------------------------ entry point

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Segmentation-guided image inpainting", "seginpaint"};
  app.require_subcommand(1);

  CommonOptions common;
  std::filesystem::path out_dir = ".";
  std::optional<std::string> stage;
  std::optional<int> port;

  auto* prepare = app.add_subcommand("prepare", "resize a raw dataset and fix test-split masks");
  common.attach(prepare);
  prepare->add_option("--out", out_dir, "output dataset root")->required();

  auto* train = app.add_subcommand("train", "train one stage");
  common.attach(train);
  std::optional<std::filesystem::path> resume;
  std::vector<std::filesystem::path> init;
  train->add_option("--stage", stage, "sp, sg or joint");
  train->add_option("--out", out_dir, "run directory (config echo, loss log, checkpoints)");
  train->add_option("--resume", resume, "training checkpoint to continue from");
  train->add_option("--init", init, "checkpoint(s) providing initial network weights");

  auto* eval = app.add_subcommand("eval", "image metrics of predictions against ground truth");
  std::filesystem::path pred, gt;
  std::optional<std::filesystem::path> eval_masks;
  bool strict = false;
  eval->add_option("--pred", pred, "directory of predicted images")->required();
  eval->add_option("--gt", gt, "directory of ground-truth images")->required();
  eval->add_option("--masks", eval_masks, "hole masks; restricts l1/l2/psnr to the holes");
  eval->add_flag("--strict", strict, "fail when a file has no counterpart");

  auto* infer = app.add_subcommand("infer", "inpaint one image or a directory");
  common.attach(infer);
  InferOptions io_opt;
  infer->add_option("--image", io_opt.image, "input image");
  infer->add_option("--mask", io_opt.mask, "hole mask (nonzero = missing)");
  infer->add_option("--segmentation", io_opt.segmentation, "label ids of the input image");
  infer->add_option("--labels", io_opt.labels, "edited label ids used inside the hole");
  infer->add_option("--input-dir", io_opt.input_dir, "directory with images/, masks/, segmentations/[, labels/]");
  infer->add_option("--checkpoint", io_opt.checkpoints, "checkpoint(s) with both networks");
  infer->add_option("--segmenter-command", io_opt.segmenter_command, "external segmenter, {input} {output}");
  infer->add_flag("--random-init", io_opt.random_init, "use untrained networks");
  infer->add_flag("--remap", io_opt.remap, "map segmentation ids through the category table");
  infer->add_option("--out", out_dir, "output directory");

  auto* serve = app.add_subcommand("serve", "HTTP label-editing service");
  common.attach(serve);
  std::vector<std::filesystem::path> serve_ckpt;
  bool serve_random = false;
  serve->add_option("--port", port, "listen port");
  serve->add_option("--checkpoint", serve_ckpt, "checkpoint(s) with both networks");
  serve->add_flag("--random-init", serve_random, "use untrained networks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    auto config = [&] {
      CommonOptions extra = common;
      if (stage) extra.overrides.push_back("train.stage=" + *stage);
      if (port) extra.overrides.push_back("serve.port=" + std::to_string(*port));
      return extra.resolve();
    };
    if (*prepare) return cmd_prepare(config(), out_dir, out);
    if (*train) return cmd_train(config(), out_dir, resume, init, out);
    if (*eval) return cmd_eval(pred, gt, eval_masks, strict, out);
    if (*infer) return cmd_infer(config(), io_opt, out_dir, out);
    if (*serve) return cmd_serve(config(), serve_ckpt, serve_random, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const IoError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ValidationError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const IntegrityError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}

}  // namespace seginpaint::cli

#endif  // SEGINPAINT_CLI_HPP
