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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "seginpaint/image_io.hpp"
#include "seginpaint/metrics.hpp"
#include "test_support.hpp"

namespace seginpaint {
namespace {

// Image whose display values are exactly the given 8-bit levels.
Image from_levels(int h, int w, std::uint64_t seed, int lo = 0, int hi = 255) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> level(lo, hi);
  Image img(h, w);
  for (auto& v : img.tensor().values()) v = from_display(static_cast<std::uint8_t>(level(rng)));
  return img;
}

Image shifted(const Image& img, int delta) {
  Image out = img;
  for (auto& v : out.tensor().values()) v = from_display(static_cast<std::uint8_t>(to_display(v) + delta));
  return out;
}

// SSIM with an explicit 2-D Gaussian window evaluated at every valid offset.
double brute_force_ssim(const Image& a, const Image& b) {
  const int k = 11;
  const double sigma = 1.5;
  std::vector<double> win(k * k);
  double total = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      win[i * k + j] = std::exp(-((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * sigma * sigma));
      total += win[i * k + j];
    }
  for (auto& v : win) v /= total;
  auto luma = [](const Image& img, int y, int x) {
    return 0.299 * to_display(img.at(0, y, x)) + 0.587 * to_display(img.at(1, y, x)) +
           0.114 * to_display(img.at(2, y, x));
  };
  const double c1 = 6.5025, c2 = 58.5225;
  double sum = 0.0;
  int count = 0;
  for (int oy = 0; oy + k <= a.height(); ++oy)
    for (int ox = 0; ox + k <= a.width(); ++ox) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          const double w = win[i * k + j], x = luma(a, oy + i, ox + j), y = luma(b, oy + i, ox + j);
          mx += w * x;
          my += w * y;
          sxx += w * x * x;
          syy += w * y * y;
          sxy += w * x * y;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cxy = sxy - mx * my;
      sum += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return sum / count;
}

TEST(Metrics, PsnrOfUnitOffsetIsFixed) {
  const Image a = from_levels(16, 16, 1, 0, 254);
  EXPECT_NEAR(metrics::psnr(shifted(a, 1), a), 48.1308036086791, 1e-9);
  EXPECT_DOUBLE_EQ(metrics::l1_error(shifted(a, 1), a), 1.0);
  EXPECT_DOUBLE_EQ(metrics::l2_error(shifted(a, 1), a), 1.0);
}

TEST(Metrics, IdenticalImagesHitTheBounds) {
  const Image a = from_levels(16, 16, 2);
  EXPECT_EQ(metrics::l1_error(a, a), 0.0);
  EXPECT_EQ(metrics::psnr(a, a), metrics::kPsnrCap);
  EXPECT_NEAR(metrics::ssim(a, a), 1.0, 1e-12);
}

TEST(Metrics, SsimMatchesTwoDimensionalWindow) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const Image a = from_levels(20, 17, 10 + seed);
    Image b = seed % 2 ? from_levels(20, 17, 30 + seed) : shifted(a, 0);
    if (seed % 2 == 0)
      for (auto& v : b.tensor().values()) v = std::clamp(v * 0.8 + 0.05, -1.0, 1.0);
    EXPECT_NEAR(metrics::ssim(a, b), brute_force_ssim(a, b), 1e-12) << "seed " << seed;
  }
  EXPECT_THROW(metrics::ssim(Image(8, 8), Image(8, 8)), std::invalid_argument);
}

TEST(Metrics, GaussianTapsAreNormalizedAndSymmetric) {
  const auto t = metrics::gaussian_taps(11, 1.5);
  double s = 0.0;
  for (double v : t) s += v;
  EXPECT_NEAR(s, 1.0, 1e-15);
  for (int i = 0; i < 5; ++i) EXPECT_DOUBLE_EQ(t[i], t[10 - i]);
}

TEST(Metrics, MaskedErrorsOnlyCountTheHole) {
  const Image a = from_levels(8, 8, 3, 0, 200);
  Image b = a;
  const HoleMask hole = HoleMask::rectangle(8, 8, {2, 2, 2, 3});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        b.at(c, y, x) = from_display(static_cast<std::uint8_t>(to_display(a.at(c, y, x)) + (hole.at(y, x) ? 10 : 1)));
  EXPECT_DOUBLE_EQ(metrics::l1_error(b, a, &hole), 10.0);
  EXPECT_DOUBLE_EQ(metrics::l2_error(b, a, &hole), 100.0);
  EXPECT_DOUBLE_EQ(metrics::l1_error(b, a), (6 * 10.0 + 58 * 1.0) / 64.0);
  EXPECT_THROW(metrics::l1_error(a, Image(4, 8)), std::invalid_argument);
}

class EvaluateTest : public ::testing::Test {
 protected:
  void write(const std::string& dir, const std::string& name, const Image& img) {
    io::write_image(tmp_ / dir / name, img);
  }
  testing::TempDir tmp_;
};

TEST_F(EvaluateTest, AveragesPairedFilesAndListsTheRest) {
  std::vector<metrics::ImageMetrics> expect;
  for (int i = 0; i < 3; ++i) {
    const Image gt = from_levels(16, 16, 40 + i, 5, 250);
    const Image pred = shifted(gt, i + 1);
    const std::string name = "f" + std::to_string(i) + ".png";
    write("pred", name, pred);
    write("gt", name, gt);
    expect.push_back(metrics::measure(name, pred, gt));
  }
  write("pred", "extra.png", Image(16, 16));
  write("gt", "lonely.png", Image(16, 16));

  const auto report = metrics::evaluate(tmp_ / "pred", tmp_ / "gt");
  ASSERT_EQ(report.n_images, 3u);
  EXPECT_EQ(report.unpaired, (std::vector<std::string>{"extra.png", "lonely.png"}));
  EXPECT_DOUBLE_EQ(report.l1, (1.0 + 2.0 + 3.0) / 3.0);
  EXPECT_DOUBLE_EQ(report.l2, (1.0 + 4.0 + 9.0) / 3.0);
  EXPECT_DOUBLE_EQ(report.ssim, (expect[0].ssim + expect[1].ssim + expect[2].ssim) / 3.0);
  EXPECT_DOUBLE_EQ(report.psnr, (expect[0].psnr + expect[1].psnr + expect[2].psnr) / 3.0);
}

TEST_F(EvaluateTest, HoleMaskDirectoryRestrictsPixelErrors) {
  const Image gt = from_levels(16, 16, 50, 5, 240);
  Image pred = gt;
  pred.at(0, 0, 0) = from_display(static_cast<std::uint8_t>(to_display(gt.at(0, 0, 0)) + 9));
  write("pred", "a.png", pred);
  write("gt", "a.png", gt);
  io::write_mask(tmp_ / "masks" / "a.png", HoleMask::rectangle(16, 16, {4, 4, 4, 4}));
  const auto masked = metrics::evaluate(tmp_ / "pred", tmp_ / "gt", {tmp_ / "masks"});
  EXPECT_EQ(masked.l1, 0.0);
  EXPECT_GT(metrics::evaluate(tmp_ / "pred", tmp_ / "gt").l1, 0.0);
}

TEST_F(EvaluateTest, MissingDirectoryIsAnIoError) {
  EXPECT_THROW(metrics::evaluate(tmp_ / "nope", tmp_ / "gt"), IoError);
}

TEST(MetricReport, TextLayout) {
  const auto r = metrics::aggregate({{"x.png", 2.0, 5.0, 0.5, 30.0}}, {"y.png"});
  EXPECT_EQ(r.to_text(),
            "[image x.png]\nl1 = 2\nl1_table_scale = 512\nl2 = 5\nl2_table_scale = 1280\nssim = 0.5\npsnr_db = 30\n\n"
            "[aggregate]\nl1 = 2\nl1_table_scale = 512\nl2 = 5\nl2_table_scale = 1280\nssim = 0.5\npsnr_db = 30\n\n"
            "n_images = 1\nunpaired = 1\nunpaired_file = y.png\n");
  EXPECT_EQ(metrics::aggregate({}).n_images, 0u);
}

}  // namespace
}  // namespace seginpaint
