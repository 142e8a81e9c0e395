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

// Raster domain types shared by every module: images, label maps, one-hot
// label tensors and hole masks.

#ifndef SEGINPAINT_TYPES_HPP
#define SEGINPAINT_TYPES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "seginpaint/tensor.hpp"

namespace seginpaint {

/// RGB image with values in [-1, 1], stored channel-major (3 x H x W).
class Image {
 public:
  Image() = default;
  Image(int height, int width, double fill = 0.0) : pixels_({3, height, width}, fill) {}
  explicit Image(Tensor chw) : pixels_(std::move(chw)) {
    if (pixels_.rank() != 3 || pixels_.dim(0) != 3) {
      throw std::invalid_argument("Image expects a 3 x H x W tensor, got " + shape_str(pixels_.shape()));
    }
  }
  /// From an NCHW tensor holding exactly one RGB sample.
  static Image from_batch(const Tensor& nchw, int index = 0) {
    Tensor chw({3, nchw.h(), nchw.w()});
    std::copy_n(nchw.data() + nchw.offset(index, 0, 0, 0), chw.size(), chw.data());
    return Image(std::move(chw));
  }

  int height() const { return pixels_.empty() ? 0 : pixels_.dim(1); }
  int width() const { return pixels_.empty() ? 0 : pixels_.dim(2); }
  double& at(int c, int y, int x) { return pixels_[(static_cast<std::size_t>(c) * height() + y) * width() + x]; }
  double at(int c, int y, int x) const {
    return pixels_[(static_cast<std::size_t>(c) * height() + y) * width() + x];
  }
  const Tensor& tensor() const { return pixels_; }
  Tensor& tensor() { return pixels_; }
  Tensor to_batch() const { return pixels_.reshaped({1, 3, height(), width()}); }

  bool in_range() const {
    return std::all_of(pixels_.values().begin(), pixels_.values().end(),
                       [](double v) { return v >= -1.0 && v <= 1.0; });
  }

  friend bool operator==(const Image& a, const Image& b) { return a.pixels_ == b.pixels_; }

 private:
  Tensor pixels_;
};

/// Maps [-1, 1] to display space: round((v + 1) / 2 * 255) clamped to [0, 255].
inline std::uint8_t to_display(double v) {
  const double s = std::round((v + 1.0) * 0.5 * 255.0);
  return static_cast<std::uint8_t>(std::clamp(s, 0.0, 255.0));
}

inline double from_display(std::uint8_t v) { return static_cast<double>(v) / 255.0 * 2.0 - 1.0; }

/// Per-pixel integer category ids.
class LabelMap {
 public:
  LabelMap() = default;
  LabelMap(int height, int width, int fill = 0)
      : height_(height), width_(width), ids_(static_cast<std::size_t>(height) * width, fill) {}
  LabelMap(int height, int width, std::vector<int> ids) : height_(height), width_(width), ids_(std::move(ids)) {
    if (ids_.size() != static_cast<std::size_t>(height) * width) throw std::invalid_argument("LabelMap size mismatch");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  int& at(int y, int x) { return ids_[static_cast<std::size_t>(y) * width_ + x]; }
  int at(int y, int x) const { return ids_[static_cast<std::size_t>(y) * width_ + x]; }
  const std::vector<int>& ids() const { return ids_; }
  std::vector<int>& ids() { return ids_; }
  int max_id() const { return ids_.empty() ? -1 : *std::max_element(ids_.begin(), ids_.end()); }

  friend bool operator==(const LabelMap&, const LabelMap&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<int> ids_;
};

struct Rect {
  int y = 0;
  int x = 0;
  int height = 0;
  int width = 0;
  bool empty() const { return height <= 0 || width <= 0; }
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Binary hole mask; 1 marks a missing pixel.
class HoleMask {
 public:
  HoleMask() = default;
  HoleMask(int height, int width, std::uint8_t fill = 0)
      : height_(height), width_(width), bits_(static_cast<std::size_t>(height) * width, fill) {}
  static HoleMask rectangle(int height, int width, const Rect& r) {
    HoleMask m(height, width);
    for (int y = r.y; y < r.y + r.height; ++y)
      for (int x = r.x; x < r.x + r.width; ++x) m.set(y, x, true);
    return m;
  }

  int height() const { return height_; }
  int width() const { return width_; }
  bool at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int y, int x, bool hole) { bits_[static_cast<std::size_t>(y) * width_ + x] = hole ? 1 : 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)); }

  /// Tight bounding rectangle of the hole pixels; empty when there are none.
  Rect bounding_rect() const {
    int y0 = height_, y1 = -1, x0 = width_, x1 = -1;
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x)
        if (at(y, x)) {
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
        }
    if (y1 < 0) return {};
    return {y0, x0, y1 - y0 + 1, x1 - x0 + 1};
  }

  /// True when the hole pixels form exactly one filled axis-aligned rectangle.
  bool is_single_rectangle() const {
    const Rect r = bounding_rect();
    if (r.empty()) return false;
    return count() == static_cast<std::size_t>(r.height) * r.width;
  }

  /// N=1, C=1 tensor of 0/1 values.
  Tensor to_tensor() const {
    Tensor t({1, 1, height_, width_});
    for (std::size_t i = 0; i < bits_.size(); ++i) t[i] = bits_[i];
    return t;
  }

  friend bool operator==(const HoleMask&, const HoleMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

/// C x H x W label probabilities; hole pixels carry the all-zero vector.
class OneHotLabels {
 public:
  OneHotLabels() = default;
  explicit OneHotLabels(Tensor chw) : values_(std::move(chw)) {
    if (values_.rank() != 3) throw std::invalid_argument("OneHotLabels expects C x H x W");
  }
  int depth() const { return values_.dim(0); }
  int height() const { return values_.dim(1); }
  int width() const { return values_.dim(2); }
  double at(int c, int y, int x) const {
    return values_[(static_cast<std::size_t>(c) * height() + y) * width() + x];
  }
  const Tensor& tensor() const { return values_; }
  Tensor to_batch() const { return values_.reshaped({1, depth(), height(), width()}); }

  friend bool operator==(const OneHotLabels& a, const OneHotLabels& b) { return a.values_ == b.values_; }

 private:
  Tensor values_;
};

}  // namespace seginpaint

#endif  // SEGINPAINT_TYPES_HPP
