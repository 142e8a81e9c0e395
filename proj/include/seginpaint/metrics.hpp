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

// Image quality metrics in 8-bit display units: L1, L2, PSNR and SSIM.
//
// L1/L2 are reported twice: the per-value mean ("canonical") and the same
// mean multiplied by 256 ("table scale"), which lands in the magnitude
// range customary for 256x256 inpainting comparisons.

#ifndef SEGINPAINT_METRICS_HPP
#define SEGINPAINT_METRICS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "seginpaint/image_io.hpp"
#include "seginpaint/types.hpp"

namespace seginpaint::metrics {

inline constexpr double kTableScale = 256.0;
inline constexpr double kPsnrCap = 100.0;

/// Image converted to 8-bit display values, kept as doubles (3 x H x W).
inline std::vector<double> display_values(const Image& img) {
  std::vector<double> out(img.tensor().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = to_display(img.tensor()[i]);
  return out;
}

namespace detail {
inline void require_same_shape(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width()) {
    throw std::invalid_argument("metric inputs differ in shape");
  }
}

// Mean of f(|p - g|) over display values, restricted to `mask` when given.
template <class F>
double mean_over(const Image& pred, const Image& gt, const HoleMask* mask, F f) {
  require_same_shape(pred, gt);
  const auto p = display_values(pred), g = display_values(gt);
  const std::size_t plane = static_cast<std::size_t>(pred.height()) * pred.width();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (mask && !mask->bits()[i % plane]) continue;
    sum += f(p[i] - g[i]);
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}
}  // namespace detail

inline double l1_error(const Image& pred, const Image& gt, const HoleMask* region = nullptr) {
  return detail::mean_over(pred, gt, region, [](double d) { return std::abs(d); });
}

inline double l2_error(const Image& pred, const Image& gt, const HoleMask* region = nullptr) {
  return detail::mean_over(pred, gt, region, [](double d) { return d * d; });
}

inline double psnr_from_mse(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

inline double psnr(const Image& pred, const Image& gt, const HoleMask* region = nullptr) {
  return psnr_from_mse(l2_error(pred, gt, region));
}

/// ITU-R BT.601 luma of the display values, row-major H x W.
inline std::vector<double> luma(const Image& img) {
  const auto v = display_values(img);
  const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
  std::vector<double> y(plane);
  for (std::size_t i = 0; i < plane; ++i) y[i] = 0.299 * v[i] + 0.587 * v[plane + i] + 0.114 * v[2 * plane + i];
  return y;
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Normalized 1-D Gaussian taps.
inline std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> taps(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    taps[i] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (auto& t : taps) t /= total;
  return taps;
}

/// Mean SSIM over all fully-contained windows of the luma planes.
/// Separable Gaussian filtering, 'valid' boundary handling.
inline double ssim(const Image& pred, const Image& gt, const SsimOptions& opt = {}) {
  detail::require_same_shape(pred, gt);
  const int H = pred.height(), W = pred.width(), k = opt.window;
  if (H < k || W < k) throw std::invalid_argument("ssim: image smaller than the window");
  const auto x = luma(pred), y = luma(gt);
  const auto taps = gaussian_taps(k, opt.sigma);
  const double c1 = (opt.k1 * 255.0) * (opt.k1 * 255.0), c2 = (opt.k2 * 255.0) * (opt.k2 * 255.0);
  const int Ho = H - k + 1, Wo = W - k + 1;

  // filter(a*b) over the valid region
  auto filtered = [&](auto value) {
    std::vector<double> rows(static_cast<std::size_t>(H) * Wo);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < Wo; ++c) {
        double s = 0.0;
        for (int t = 0; t < k; ++t) s += taps[t] * value(static_cast<std::size_t>(r) * W + c + t);
        rows[static_cast<std::size_t>(r) * Wo + c] = s;
      }
    std::vector<double> out(static_cast<std::size_t>(Ho) * Wo);
    for (int r = 0; r < Ho; ++r)
      for (int c = 0; c < Wo; ++c) {
        double s = 0.0;
        for (int t = 0; t < k; ++t) s += taps[t] * rows[static_cast<std::size_t>(r + t) * Wo + c];
        out[static_cast<std::size_t>(r) * Wo + c] = s;
      }
    return out;
  };
  const auto mx = filtered([&](std::size_t i) { return x[i]; });
  const auto my = filtered([&](std::size_t i) { return y[i]; });
  const auto mxx = filtered([&](std::size_t i) { return x[i] * x[i]; });
  const auto myy = filtered([&](std::size_t i) { return y[i] * y[i]; });
  const auto mxy = filtered([&](std::size_t i) { return x[i] * y[i]; });

  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = mxx[i] - mx[i] * mx[i];
    const double vy = myy[i] - my[i] * my[i];
    const double cxy = mxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

struct ImageMetrics {
  std::string name;
  double l1 = 0.0;
  double l2 = 0.0;
  double ssim = 1.0;
  double psnr = kPsnrCap;
};

inline ImageMetrics measure(const std::string& name, const Image& pred, const Image& gt,
                            const HoleMask* region = nullptr) {
  ImageMetrics m;
  m.name = name;
  m.l1 = l1_error(pred, gt, region);
  m.l2 = l2_error(pred, gt, region);
  m.psnr = psnr_from_mse(m.l2);
  m.ssim = ssim(pred, gt);
  return m;
}

struct MetricReport {
  std::vector<ImageMetrics> images;
  std::vector<std::string> unpaired;
  double l1 = 0.0;
  double l2 = 0.0;
  double ssim = 0.0;
  double psnr = 0.0;
  std::size_t n_images = 0;

  /// Key-value text: one block per image, then an aggregate block.
  std::string to_text() const {
    std::ostringstream os;
    os << std::setprecision(10);
    auto block = [&](const std::string& header, double l1v, double l2v, double ssimv, double psnrv) {
      os << '[' << header << "]\n";
      os << "l1 = " << l1v << "\nl1_table_scale = " << l1v * kTableScale << '\n';
      os << "l2 = " << l2v << "\nl2_table_scale = " << l2v * kTableScale << '\n';
      os << "ssim = " << ssimv << "\npsnr_db = " << psnrv << "\n\n";
    };
    for (const auto& m : images) block("image " + m.name, m.l1, m.l2, m.ssim, m.psnr);
    block("aggregate", l1, l2, ssim, psnr);
    os << "n_images = " << n_images << '\n';
    os << "unpaired = " << unpaired.size() << '\n';
    for (const auto& u : unpaired) os << "unpaired_file = " << u << '\n';
    return os.str();
  }
};

/// Ordered (deterministic) average of per-image metrics.
inline MetricReport aggregate(std::vector<ImageMetrics> images, std::vector<std::string> unpaired = {}) {
  MetricReport r;
  r.images = std::move(images);
  r.unpaired = std::move(unpaired);
  r.n_images = r.images.size();
  if (r.n_images == 0) return r;
  for (const auto& m : r.images) {
    r.l1 += m.l1;
    r.l2 += m.l2;
    r.ssim += m.ssim;
    r.psnr += m.psnr;
  }
  const double n = static_cast<double>(r.n_images);
  r.l1 /= n;
  r.l2 /= n;
  r.ssim /= n;
  r.psnr /= n;
  return r;
}

struct EvaluateOptions {
  /// Directory of hole masks (same file names); restricts L1/L2/PSNR to holes.
  std::optional<std::filesystem::path> hole_masks;
};

/// Pairs files by name across the two directories. Files present on one
/// side only are listed as unpaired and excluded from the averages.
inline MetricReport evaluate(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                             const EvaluateOptions& opt = {}) {
  namespace fs = std::filesystem;
  auto list = [](const fs::path& dir) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file()) names.push_back(e.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
  };
  const auto preds = list(pred_dir), gts = list(gt_dir);
  std::vector<std::string> paired, unpaired;
  std::set_intersection(preds.begin(), preds.end(), gts.begin(), gts.end(), std::back_inserter(paired));
  std::set_symmetric_difference(preds.begin(), preds.end(), gts.begin(), gts.end(), std::back_inserter(unpaired));
  std::vector<ImageMetrics> per_image;
  for (const auto& name : paired) {
    const Image p = io::read_image(pred_dir / name);
    const Image g = io::read_image(gt_dir / name);
    if (opt.hole_masks) {
      const HoleMask m = io::read_mask(*opt.hole_masks / name);
      per_image.push_back(measure(name, p, g, &m));
    } else {
      per_image.push_back(measure(name, p, g));
    }
  }
  return aggregate(std::move(per_image), std::move(unpaired));
}

}  // namespace seginpaint::metrics

#endif  // SEGINPAINT_METRICS_HPP
