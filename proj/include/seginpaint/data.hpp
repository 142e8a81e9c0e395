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

// Dataset ingestion: category remapping, one-hot encoding, random
// rectangular holes and sample assembly.

#ifndef SEGINPAINT_DATA_HPP
#define SEGINPAINT_DATA_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "seginpaint/errors.hpp"
#include "seginpaint/image_io.hpp"
#include "seginpaint/logging.hpp"
#include "seginpaint/types.hpp"

namespace seginpaint {

/// Total table from raw dataset ids onto [0, target_count).
struct CategoryMapping {
  int source_count = 0;
  int target_count = 0;
  std::vector<int> table;
  std::vector<std::string> target_names;

  void validate() const {
    if (source_count <= 0 || target_count <= 0) throw ConfigError("category mapping needs positive counts");
    if (static_cast<int>(table.size()) != source_count) {
      throw ConfigError("category mapping table has " + std::to_string(table.size()) + " entries, expected " +
                        std::to_string(source_count));
    }
    std::vector<bool> hit(static_cast<std::size_t>(target_count), false);
    for (int src = 0; src < source_count; ++src) {
      const int t = table[src];
      if (t < 0 || t >= target_count) {
        throw ConfigError("source id " + std::to_string(src) + " is unmapped (target " + std::to_string(t) + ")");
      }
      hit[t] = true;
    }
    for (int t = 0; t < target_count; ++t) {
      if (!hit[t]) throw ConfigError("target category " + std::to_string(t) + " has no source id");
    }
  }

  static CategoryMapping identity(int count) {
    CategoryMapping m{count, count, std::vector<int>(static_cast<std::size_t>(count)), {}};
    for (int i = 0; i < count; ++i) {
      m.table[i] = i;
      m.target_names.push_back("class" + std::to_string(i));
    }
    return m;
  }

  /// Cityscapes label ids (0..33, 34 = license plate) grouped into eight
  /// street-scene categories.
  static CategoryMapping cityscapes() {
    enum Target { road, building, sign, vegetation, sky, person, vehicle, unlabeled };
    CategoryMapping m{35, 8, std::vector<int>(35, unlabeled),
                      {"road", "building", "sign", "vegetation", "sky", "person", "vehicle", "unlabeled"}};
    auto put = [&](std::initializer_list<int> ids, Target t) {
      for (int id : ids) m.table[id] = t;
    };
    put({7, 8, 9, 10}, road);                         // road, sidewalk, parking, rail track
    put({11, 12, 13, 15, 16}, building);              // building, wall, fence, bridge, tunnel
    put({17, 19, 20}, sign);                          // pole, traffic light, traffic sign
    put({21, 22}, vegetation);                        // vegetation, terrain
    put({23}, sky);                                   //
    put({24, 25}, person);                            // person, rider
    put({26, 27, 28, 29, 30, 31, 32, 33}, vehicle);   // car .. bicycle, caravan, trailer
    return m;
  }
};

inline LabelMap remap_labels(const LabelMap& raw, const CategoryMapping& mapping) {
  LabelMap out(raw.height(), raw.width());
  for (std::size_t i = 0; i < raw.ids().size(); ++i) {
    const int src = raw.ids()[i];
    if (src < 0 || src >= mapping.source_count) {
      throw ConfigError("unmapped source id " + std::to_string(src));
    }
    const int t = mapping.table[src];
    if (t < 0 || t >= mapping.target_count) throw ConfigError("unmapped source id " + std::to_string(src));
    out.ids()[i] = t;
  }
  return out;
}

inline OneHotLabels one_hot(const LabelMap& labels, int classes, const HoleMask& hole) {
  if (labels.height() != hole.height() || labels.width() != hole.width()) {
    throw std::invalid_argument("one_hot: label map and hole mask differ in shape");
  }
  if (classes <= 0) throw std::invalid_argument("one_hot: class count must be positive");
  const int H = labels.height(), W = labels.width();
  Tensor t({classes, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int id = labels.at(y, x);
      if (id < 0 || id >= classes) throw std::invalid_argument("one_hot: label " + std::to_string(id) + " >= C");
      if (!hole.at(y, x)) t[(static_cast<std::size_t>(id) * H + y) * W + x] = 1.0;
    }
  return OneHotLabels(std::move(t));
}

inline OneHotLabels one_hot(const LabelMap& labels, int classes) {
  return one_hot(labels, classes, HoleMask(labels.height(), labels.width()));
}

/// Per-pixel argmax over channels of sample `n` of an NCHW tensor; ties
/// resolve to the lowest channel.
inline LabelMap argmax_labels(const Tensor& nchw, int n = 0) {
  LabelMap out(nchw.h(), nchw.w());
  for (int y = 0; y < nchw.h(); ++y)
    for (int x = 0; x < nchw.w(); ++x) {
      int best = 0;
      for (int c = 1; c < nchw.c(); ++c)
        if (nchw.at(n, c, y, x) > nchw.at(n, best, y, x)) best = c;
      out.at(y, x) = best;
    }
  return out;
}

struct HoleRange {
  double lo = 1.0 / 8.0;
  double hi = 1.0 / 2.0;
};

/// Inclusive side-length bounds [ceil(lo * dim), floor(hi * dim)].
inline std::pair<int, int> side_bounds(int dim, const HoleRange& range) {
  const int lo = static_cast<int>(std::ceil(range.lo * dim - 1e-9));
  const int hi = static_cast<int>(std::floor(range.hi * dim + 1e-9));
  if (lo > hi) {
    throw std::invalid_argument("degenerate hole range for dimension " + std::to_string(dim) + ": [" +
                                std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return {std::max(lo, 1), hi};
}

/// One axis-aligned rectangle; each side independently uniform within the
/// range, top-left uniform over positions that keep it inside the frame.
template <class Rng>
HoleMask generate_hole_mask(int height, int width, const HoleRange& range, Rng& rng) {
  if (!(range.lo > 0.0 && range.lo <= range.hi && range.hi <= 1.0)) {
    throw std::invalid_argument("hole range must satisfy 0 < lo <= hi <= 1");
  }
  if (height < 8 || width < 8) throw std::invalid_argument("hole masks need images of at least 8x8");
  const auto [hmin, hmax] = side_bounds(height, range);
  const auto [wmin, wmax] = side_bounds(width, range);
  Rect r;
  r.height = std::uniform_int_distribution<int>(hmin, hmax)(rng);
  r.width = std::uniform_int_distribution<int>(wmin, wmax)(rng);
  r.y = std::uniform_int_distribution<int>(0, height - r.height)(rng);
  r.x = std::uniform_int_distribution<int>(0, width - r.width)(rng);
  return HoleMask::rectangle(height, width, r);
}

inline Image apply_hole(const Image& image, const HoleMask& mask, double fill = 0.0) {
  if (image.height() != mask.height() || image.width() != mask.width()) {
    throw std::invalid_argument("apply_hole: image and mask differ in shape");
  }
  if (fill < -1.0 || fill > 1.0) throw std::invalid_argument("apply_hole: fill outside [-1, 1]");
  Image out = image;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < mask.height(); ++y)
      for (int x = 0; x < mask.width(); ++x)
        if (mask.at(y, x)) out.at(c, y, x) = fill;
  return out;
}

struct Sample {
  std::string name;
  Image image;             // ground truth
  LabelMap labels;         // ground truth, remapped
  HoleMask mask;
  Image masked_image;      // hole filled with 0
  OneHotLabels masked_labels;
};

inline Sample make_sample(std::string name, Image image, LabelMap labels, HoleMask mask, int classes) {
  if (image.height() != labels.height() || image.width() != labels.width()) {
    throw std::invalid_argument("sample image and labels differ in shape");
  }
  Sample s;
  s.name = std::move(name);
  s.masked_image = apply_hole(image, mask, 0.0);
  s.masked_labels = one_hot(labels, classes, mask);
  s.image = std::move(image);
  s.labels = std::move(labels);
  s.mask = std::move(mask);
  return s;
}

/// splitmix64 finalizer used to derive independent per-item seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(a) ^ b) ^ c);
}

enum class Split { train, test };

inline std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

/// Random-access sample producer. `get` is a pure function of
/// (index, epoch), which makes iteration restartable at any position.
class SampleSource {
 public:
  virtual ~SampleSource() = default;
  virtual std::size_t size() const = 0;
  virtual Sample get(std::size_t index, std::uint64_t epoch) const = 0;
  virtual int num_classes() const = 0;
};

/// Fixed samples, identical every epoch.
class InMemoryDataset final : public SampleSource {
 public:
  InMemoryDataset(std::vector<Sample> samples, int classes) : samples_(std::move(samples)), classes_(classes) {}
  std::size_t size() const override { return samples_.size(); }
  Sample get(std::size_t index, std::uint64_t) const override { return samples_.at(index); }
  int num_classes() const override { return classes_; }

 private:
  std::vector<Sample> samples_;
  int classes_;
};

/// `<root>/<split>/images/<name>.(png|jpg)` paired with
/// `<root>/<split>/labels/<name>.png`.
///
/// Train masks are redrawn every epoch; test masks depend only on the seed
/// and the item index.
class DirectoryDataset final : public SampleSource {
 public:
  struct Entry {
    std::string name;
    std::filesystem::path image;
    std::filesystem::path labels;
  };

  DirectoryDataset(const std::filesystem::path& root, Split split, CategoryMapping mapping, int image_size,
                   std::uint64_t seed, HoleRange range = {})
      : split_(split), mapping_(std::move(mapping)), image_size_(image_size), seed_(seed), range_(range) {
    mapping_.validate();
    const auto dir = root / to_string(split);
    const auto images = dir / "images";
    if (!std::filesystem::is_directory(images)) throw IoError("missing image directory " + images.string());
    for (const auto& e : std::filesystem::directory_iterator(images)) {
      if (!e.is_regular_file()) continue;
      auto ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
      if (ext != ".png" && ext != ".jpg" && ext != ".jpeg") continue;
      const auto stem = e.path().stem().string();
      const auto label = dir / "labels" / (stem + ".png");
      if (!std::filesystem::exists(label)) {
        warn("skipping " + e.path().string() + ": no label file " + label.string());
        continue;
      }
      entries_.push_back({stem, e.path(), label});
    }
    std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) { return a.name < b.name; });
  }

  std::size_t size() const override { return entries_.size(); }
  int num_classes() const override { return mapping_.target_count; }
  const std::vector<Entry>& entries() const { return entries_; }
  const CategoryMapping& mapping() const { return mapping_; }

  HoleMask mask_for(std::size_t index, std::uint64_t epoch, int height, int width) const {
    std::mt19937_64 rng(mix_seed(seed_, split_ == Split::train ? epoch + 1 : 0, index));
    return generate_hole_mask(height, width, range_, rng);
  }

  Sample get(std::size_t index, std::uint64_t epoch) const override {
    const Entry& e = entries_.at(index);
    Image image = io::read_image(e.image, image_size_);
    LabelMap raw = io::read_labels(e.labels, image_size_);
    if (raw.height() != image.height() || raw.width() != image.width()) {
      throw IoError("label file " + e.labels.string() + " does not match its image size");
    }
    LabelMap labels = remap_labels(raw, mapping_);
    HoleMask mask = mask_for(index, epoch, image.height(), image.width());
    return make_sample(e.name, std::move(image), std::move(labels), std::move(mask), mapping_.target_count);
  }

 private:
  Split split_;
  CategoryMapping mapping_;
  int image_size_;
  std::uint64_t seed_;
  HoleRange range_;
  std::vector<Entry> entries_;
};

/// Every sample of one epoch, in index order.
inline std::vector<Sample> load_epoch(const SampleSource& source, std::uint64_t epoch) {
  std::vector<Sample> out;
  out.reserve(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) out.push_back(source.get(i, epoch));
  return out;
}

}  // namespace seginpaint

#endif  // SEGINPAINT_DATA_HPP
