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

// PNG/JPEG codec glue on top of OpenCV. Images are RGB in memory; OpenCV's
// BGR order is confined to this file.

#ifndef SEGINPAINT_IMAGE_IO_HPP
#define SEGINPAINT_IMAGE_IO_HPP

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "seginpaint/errors.hpp"
#include "seginpaint/types.hpp"

namespace seginpaint::io {

namespace fs = std::filesystem;

inline cv::Mat image_to_mat(const Image& img) {
  cv::Mat m(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width(); ++x) {
      row[x] = cv::Vec3b(to_display(img.at(2, y, x)), to_display(img.at(1, y, x)), to_display(img.at(0, y, x)));
    }
  }
  return m;
}

inline Image mat_to_image(const cv::Mat& bgr) {
  Image img(bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      img.at(0, y, x) = from_display(row[x][2]);
      img.at(1, y, x) = from_display(row[x][1]);
      img.at(2, y, x) = from_display(row[x][0]);
    }
  }
  return img;
}

inline cv::Mat labels_to_mat(const LabelMap& labels) {
  cv::Mat m(labels.height(), labels.width(), CV_8UC1);
  for (int y = 0; y < labels.height(); ++y)
    for (int x = 0; x < labels.width(); ++x) {
      const int v = labels.at(y, x);
      if (v < 0 || v > 255) throw ValidationError("label id " + std::to_string(v) + " does not fit in 8 bits");
      m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(v);
    }
  return m;
}

inline LabelMap mat_to_labels(const cv::Mat& gray) {
  LabelMap labels(gray.rows, gray.cols);
  for (int y = 0; y < gray.rows; ++y)
    for (int x = 0; x < gray.cols; ++x) labels.at(y, x) = gray.at<std::uint8_t>(y, x);
  return labels;
}

inline cv::Mat mask_to_mat(const HoleMask& mask) {
  cv::Mat m(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) m.at<std::uint8_t>(y, x) = mask.at(y, x) ? 255 : 0;
  return m;
}

// Any nonzero byte counts as hole.
inline HoleMask mat_to_mask(const cv::Mat& gray) {
  HoleMask mask(gray.rows, gray.cols);
  for (int y = 0; y < gray.rows; ++y)
    for (int x = 0; x < gray.cols; ++x) mask.set(y, x, gray.at<std::uint8_t>(y, x) != 0);
  return mask;
}

inline cv::Mat read_mat(const fs::path& path, int flags) {
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw IoError("cannot read image file " + path.string());
  return m;
}

inline void write_mat(const fs::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw IoError("cannot write image file " + path.string());
}

/// Reads an 8-bit colour image; resizes bilinearly when `size` > 0.
inline Image read_image(const fs::path& path, int size = 0) {
  cv::Mat m = read_mat(path, cv::IMREAD_COLOR);
  if (size > 0 && (m.rows != size || m.cols != size)) cv::resize(m, m, cv::Size(size, size), 0, 0, cv::INTER_LINEAR);
  return mat_to_image(m);
}

/// Reads a single-channel 8-bit id map; resizes nearest-neighbour when `size` > 0.
inline LabelMap read_labels(const fs::path& path, int size = 0) {
  cv::Mat m = read_mat(path, cv::IMREAD_UNCHANGED);
  if (m.channels() != 1 || m.depth() != CV_8U) throw IoError("label file is not single-channel 8-bit: " + path.string());
  if (size > 0 && (m.rows != size || m.cols != size)) cv::resize(m, m, cv::Size(size, size), 0, 0, cv::INTER_NEAREST);
  return mat_to_labels(m);
}

inline HoleMask read_mask(const fs::path& path) { return mat_to_mask(read_mat(path, cv::IMREAD_GRAYSCALE)); }

inline void write_image(const fs::path& path, const Image& img) { write_mat(path, image_to_mat(img)); }
inline void write_labels(const fs::path& path, const LabelMap& labels) { write_mat(path, labels_to_mat(labels)); }
inline void write_mask(const fs::path& path, const HoleMask& mask) { write_mat(path, mask_to_mat(mask)); }

// ------------------------------------------------------------------ in-memory

inline std::vector<std::uint8_t> encode_png(const cv::Mat& m) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", m, out)) throw IoError("PNG encoding failed");
  return out;
}

inline cv::Mat decode(std::span<const std::uint8_t> bytes, int flags) {
  if (bytes.empty()) throw ValidationError("empty image payload");
  cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat m;
  try {
    m = cv::imdecode(buf, flags);
  } catch (const cv::Exception&) {
    m = cv::Mat();
  }
  if (m.empty()) throw ValidationError("payload is not a decodable image");
  return m;
}

inline std::vector<std::uint8_t> encode_image_png(const Image& img) { return encode_png(image_to_mat(img)); }
inline std::vector<std::uint8_t> encode_labels_png(const LabelMap& l) { return encode_png(labels_to_mat(l)); }

inline Image decode_image(std::span<const std::uint8_t> bytes) { return mat_to_image(decode(bytes, cv::IMREAD_COLOR)); }
inline HoleMask decode_mask(std::span<const std::uint8_t> bytes) {
  return mat_to_mask(decode(bytes, cv::IMREAD_GRAYSCALE));
}
inline LabelMap decode_labels(std::span<const std::uint8_t> bytes) {
  cv::Mat m = decode(bytes, cv::IMREAD_UNCHANGED);
  if (m.channels() != 1 || m.depth() != CV_8U) throw ValidationError("label payload must be single-channel 8-bit PNG");
  return mat_to_labels(m);
}

// ------------------------------------------------------------------ palette

struct PaletteEntry {
  int id;
  std::string name;
  std::array<std::uint8_t, 3> rgb;
};

/// Display colours for a label set; ids beyond the named list cycle a
/// fixed fallback ramp.
inline std::vector<PaletteEntry> make_palette(const std::vector<std::string>& names) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 8> kBase{{{128, 64, 128},
                                                                     {70, 70, 70},
                                                                     {220, 220, 0},
                                                                     {107, 142, 35},
                                                                     {70, 130, 180},
                                                                     {220, 20, 60},
                                                                     {0, 0, 142},
                                                                     {0, 0, 0}}};
  std::vector<PaletteEntry> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::array<std::uint8_t, 3> rgb = i < kBase.size()
                                          ? kBase[i]
                                          : std::array<std::uint8_t, 3>{static_cast<std::uint8_t>(37 * i % 256),
                                                                        static_cast<std::uint8_t>(91 * i % 256),
                                                                        static_cast<std::uint8_t>(151 * i % 256)};
    out.push_back({static_cast<int>(i), names[i], rgb});
  }
  return out;
}

inline cv::Mat colorize(const LabelMap& labels, const std::vector<PaletteEntry>& palette) {
  cv::Mat m(labels.height(), labels.width(), CV_8UC3);
  for (int y = 0; y < labels.height(); ++y)
    for (int x = 0; x < labels.width(); ++x) {
      const int id = labels.at(y, x);
      const auto rgb = (id >= 0 && id < static_cast<int>(palette.size())) ? palette[id].rgb
                                                                          : std::array<std::uint8_t, 3>{255, 255, 255};
      m.at<cv::Vec3b>(y, x) = cv::Vec3b(rgb[2], rgb[1], rgb[0]);
    }
  return m;
}

}  // namespace seginpaint::io

#endif  // SEGINPAINT_IMAGE_IO_HPP
