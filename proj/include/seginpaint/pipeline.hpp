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

// Inference: segment the incomplete image, complete its labels inside the
// hole (or take the user's edits), synthesize pixels from the completed
// labels and paste the known region back.

#ifndef SEGINPAINT_PIPELINE_HPP
#define SEGINPAINT_PIPELINE_HPP

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "seginpaint/checkpoint.hpp"
#include "seginpaint/data.hpp"
#include "seginpaint/errors.hpp"
#include "seginpaint/generator.hpp"
#include "seginpaint/image_io.hpp"
#include "seginpaint/training.hpp"
#include "seginpaint/types.hpp"

namespace seginpaint {

/// Produces a label map of the same size as the image it is given.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual LabelMap segment(const Image& image) const = 0;
};

/// Returns fixed labels regardless of the image; stands in for a real
/// segmentation model when ground truth is at hand.
class GroundTruthSegmenter final : public Segmenter {
 public:
  explicit GroundTruthSegmenter(LabelMap labels) : labels_(std::move(labels)) {}
  explicit GroundTruthSegmenter(const Sample& sample) : labels_(sample.labels) {}

  LabelMap segment(const Image& image) const override {
    if (image.height() != labels_.height() || image.width() != labels_.width()) {
      throw ValidationError("segmentation is " + std::to_string(labels_.width()) + "x" +
                            std::to_string(labels_.height()) + ", image is " + std::to_string(image.width()) + "x" +
                            std::to_string(image.height()));
    }
    return labels_;
  }

 private:
  LabelMap labels_;
};

/// Runs an external tool through the shell. `{input}` and `{output}` in the
/// command are replaced by an RGB PNG path and the expected single-channel
/// id PNG path; the tool must write the latter.
class CommandSegmenter final : public Segmenter {
 public:
  CommandSegmenter(std::string command, std::filesystem::path work_dir, std::optional<CategoryMapping> remap = {})
      : command_(std::move(command)), work_dir_(std::move(work_dir)), remap_(std::move(remap)) {}

  LabelMap segment(const Image& image) const override {
    std::filesystem::create_directories(work_dir_);
    const auto in = work_dir_ / "segment_in.png";
    const auto out = work_dir_ / "segment_out.png";
    std::filesystem::remove(out);
    io::write_image(in, image);
    std::string cmd = command_;
    replace_all(cmd, "{input}", quote(in.string()));
    replace_all(cmd, "{output}", quote(out.string()));
    if (const int rc = std::system(cmd.c_str()); rc != 0) {
      throw IoError("segmenter command failed with status " + std::to_string(rc) + ": " + cmd);
    }
    if (!std::filesystem::exists(out)) throw IoError("segmenter command did not write " + out.string());
    LabelMap labels = io::read_labels(out);
    if (remap_) labels = remap_labels(labels, *remap_);
    if (labels.height() != image.height() || labels.width() != image.width()) {
      throw ValidationError("segmenter output size differs from its input");
    }
    return labels;
  }

 private:
  static void replace_all(std::string& s, const std::string& from, const std::string& to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
      s.replace(pos, from.size(), to);
    }
  }
  static std::string quote(const std::string& p) {
    std::string q = "'";
    for (char c : p) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
  }

  std::string command_;
  std::filesystem::path work_dir_;
  std::optional<CategoryMapping> remap_;
};

// ------------------------------------------------------------------ compositing

/// Per element: `pred` where the mask is set, `known` elsewhere. Tensors are
/// C x H x W or N x C x H x W with the mask broadcast over channels and batch.
inline Tensor composite(const Tensor& pred, const Tensor& known, const HoleMask& mask) {
  pred.require_same_shape(known, "composite");
  const std::size_t plane = static_cast<std::size_t>(mask.height()) * mask.width();
  if (pred.rank() < 2 || pred.dim(pred.rank() - 2) != mask.height() || pred.dim(pred.rank() - 1) != mask.width()) {
    throw std::invalid_argument("composite: mask does not match " + shape_str(pred.shape()));
  }
  Tensor out = known;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask.bits()[i % plane]) out[i] = pred[i];
  return out;
}

inline Image composite(const Image& pred, const Image& known, const HoleMask& mask) {
  return Image(composite(pred.tensor(), known.tensor(), mask));
}

inline LabelMap composite(const LabelMap& pred, const LabelMap& known, const HoleMask& mask) {
  if (pred.height() != known.height() || pred.width() != known.width() || pred.height() != mask.height() ||
      pred.width() != mask.width()) {
    throw std::invalid_argument("composite: label maps and mask differ in shape");
  }
  LabelMap out = known;
  for (std::size_t i = 0; i < out.ids().size(); ++i)
    if (mask.bits()[i]) out.ids()[i] = pred.ids()[i];
  return out;
}

// ------------------------------------------------------------------ model

/// Both generators plus the label names they were trained with.
struct InpaintModel {
  GeneratorParams sp;
  GeneratorParams sg;
  std::vector<std::string> class_names;

  int classes() const { return static_cast<int>(class_names.size()); }

  void validate() const {
    if (sp.config.head != Head::softmax || sg.config.head != Head::tanh) {
      throw ValidationError("model heads are not (softmax, tanh)");
    }
    if (sp.config.output_depth != classes() || sp.config.input_depth != classes() + 4 ||
        sg.config.input_depth != classes() + 4 || sg.config.output_depth != 3) {
      throw ValidationError("model depths do not match " + std::to_string(classes()) + " classes");
    }
  }

  /// Hex SHA-256 of both generators' configurations and weights.
  std::string digest() const {
    Archive a;
    store_generator(a, "sp", sp);
    store_generator(a, "sg", sg);
    const auto bytes = serialize(a);
    return to_hex(std::span(bytes).last(32));
  }
};

/// Gathers both generators from one or more checkpoints (training states
/// or exported models); the first file providing a network wins.
inline InpaintModel load_model(const std::vector<std::filesystem::path>& paths) {
  std::optional<GeneratorParams> sp, sg;
  std::vector<std::string> names;
  for (const auto& path : paths) {
    const Archive a = read_archive(path);
    const auto nets = a.meta.value("networks", nlohmann::json::object());
    if (!sp && nets.contains("sp")) sp = load_generator(a, "sp");
    if (!sg && nets.contains("sg")) sg = load_generator(a, "sg");
    std::vector<std::string> file_names;
    if (a.meta.contains("config")) {
      file_names = a.meta.at("config").at("class_names").get<std::vector<std::string>>();
    } else if (a.meta.contains("class_names")) {
      file_names = a.meta.at("class_names").get<std::vector<std::string>>();
    } else {
      throw ValidationError("checkpoint " + path.string() + " does not list its classes");
    }
    if (names.empty()) names = file_names;
    if (names != file_names) throw ValidationError("checkpoints disagree on the class list");
  }
  if (!sp || !sg) throw ValidationError("checkpoints must provide both the label-completion and the synthesis network");
  InpaintModel m{std::move(*sp), std::move(*sg), std::move(names)};
  m.validate();
  return m;
}

inline InpaintModel load_model(const std::filesystem::path& path) {
  return load_model(std::vector<std::filesystem::path>{path});
}

/// Bundles the generators of one or more training checkpoints into a
/// single inference file.
inline void save_model(const InpaintModel& m, const std::filesystem::path& path) {
  Archive a;
  a.meta["kind"] = "model";
  a.meta["class_names"] = m.class_names;
  store_generator(a, "sp", m.sp);
  store_generator(a, "sg", m.sg);
  write_archive(path, a);
}

/// Untrained networks; for smoke tests and UI development.
inline InpaintModel random_model(std::vector<std::string> class_names, double width_scale, std::uint64_t seed) {
  TrainConfig c;
  c.class_names = std::move(class_names);
  c.width_scale = width_scale;
  InpaintModel m{build_generator(sp_gen_config(c), mix_seed(seed, 1)), build_generator(sg_gen_config(c), mix_seed(seed, 3)),
                 c.class_names};
  m.validate();
  return m;
}

// ------------------------------------------------------------------ inpainting

struct InpaintResult {
  LabelMap initial_labels;    // segmenter output
  LabelMap proposed_labels;   // label-completion argmax, composited with the initial labels
  LabelMap predicted_labels;  // labels used for synthesis (edits if supplied)
  Image image;                // completed image
  Tensor intermediate;        // 1 x C x H x W label probabilities
};

inline void validate_labels(const LabelMap& labels, int classes, int height, int width, const char* what) {
  if (labels.height() != height || labels.width() != width) {
    throw ValidationError(std::string(what) + " are " + std::to_string(labels.width()) + "x" +
                          std::to_string(labels.height()) + ", expected " + std::to_string(width) + "x" +
                          std::to_string(height));
  }
  for (int id : labels.ids())
    if (id < 0 || id >= classes) {
      throw ValidationError(std::string(what) + " contain id " + std::to_string(id) + " >= " + std::to_string(classes));
    }
}

/// Label-completion half: segmentation of the incomplete image with the
/// hole cleared, then the network's argmax inside the hole.
inline InpaintResult propose_labels(const Image& image, const HoleMask& mask, const Segmenter& segmenter,
                                    const InpaintModel& model) {
  const int H = image.height(), W = image.width();
  if (mask.height() != H || mask.width() != W) throw ValidationError("mask size differs from the image");
  if (H % 16 != 0 || W % 16 != 0 || H == 0) {
    throw ValidationError("image size " + std::to_string(W) + "x" + std::to_string(H) + " is not a multiple of 16");
  }
  const Image masked = apply_hole(image, mask, 0.0);
  InpaintResult r;
  r.initial_labels = segmenter.segment(masked);
  validate_labels(r.initial_labels, model.classes(), H, W, "segmenter labels");
  r.intermediate = sp_forward(model.sp, one_hot(r.initial_labels, model.classes(), mask), masked, mask);
  r.proposed_labels = composite(argmax_labels(r.intermediate), r.initial_labels, mask);
  return r;
}

/// Image-synthesis half for a given completed label map.
inline Image synthesize(const Image& image, const HoleMask& mask, const LabelMap& labels, const InpaintModel& model) {
  if (mask.count() == 0) return image;
  const Image masked = apply_hole(image, mask, 0.0);
  const Image raw = sg_forward(model.sg, masked, one_hot(labels, model.classes()).to_batch(), mask);
  return composite(raw, image, mask);
}

inline InpaintResult inpaint(const Image& image, const HoleMask& mask, const Segmenter& segmenter,
                             const InpaintModel& model, const std::optional<LabelMap>& edited_labels = std::nullopt) {
  InpaintResult r = propose_labels(image, mask, segmenter, model);
  if (edited_labels) {
    validate_labels(*edited_labels, model.classes(), image.height(), image.width(), "edited labels");
    r.predicted_labels = composite(*edited_labels, r.initial_labels, mask);
  } else {
    r.predicted_labels = r.proposed_labels;
  }
  r.image = synthesize(image, mask, r.predicted_labels, model);
  return r;
}

// ------------------------------------------------------------------ batch inference

struct BatchInferenceOptions {
  std::optional<CategoryMapping> remap;  // applied to files in segmentations/
};

struct BatchInferenceReport {
  std::vector<std::string> written;
  std::vector<std::string> skipped;
};

/// Reads `<in>/images/<name>.png`, `<in>/masks/<name>.png`,
/// `<in>/segmentations/<name>.png` and optionally `<in>/labels/<name>.png`
/// (edited labels). Writes `<name>_labels.png`, `<name>_labels_color.png`
/// and `<name>_inpainted.png` into `out`.
inline BatchInferenceReport infer_directory(const std::filesystem::path& in, const std::filesystem::path& out,
                                            const InpaintModel& model, const BatchInferenceOptions& opt = {}) {
  namespace fs = std::filesystem;
  const auto images = in / "images";
  if (!fs::is_directory(images)) throw IoError("missing directory " + images.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(images))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  fs::create_directories(out);
  const auto palette = io::make_palette(model.class_names);
  BatchInferenceReport report;
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    const auto mask_path = in / "masks" / (stem + ".png");
    const auto seg_path = in / "segmentations" / (stem + ".png");
    if (!fs::exists(mask_path) || !fs::exists(seg_path)) {
      warn("skipping " + f.string() + ": mask or segmentation missing");
      report.skipped.push_back(stem);
      continue;
    }
    const Image image = io::read_image(f);
    const HoleMask mask = io::read_mask(mask_path);
    LabelMap seg = io::read_labels(seg_path);
    if (opt.remap) seg = remap_labels(seg, *opt.remap);
    std::optional<LabelMap> edits;
    if (const auto p = in / "labels" / (stem + ".png"); fs::exists(p)) edits = io::read_labels(p);
    const InpaintResult r = inpaint(image, mask, GroundTruthSegmenter(seg), model, edits);
    io::write_labels(out / (stem + "_labels.png"), r.predicted_labels);
    io::write_mat(out / (stem + "_labels_color.png"), io::colorize(r.predicted_labels, palette));
    io::write_image(out / (stem + "_inpainted.png"), r.image);
    report.written.push_back(stem);
  }
  return report;
}

}  // namespace seginpaint

#endif  // SEGINPAINT_PIPELINE_HPP
