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

#include <array>
#include <set>

#include "seginpaint/discriminator.hpp"
#include "test_support.hpp"

namespace seginpaint {
namespace {

using testing::random_tensor;

DiscriminatorConfig small_config(int depth) {
  DiscriminatorConfig c;
  c.input_depth = depth;
  c.width_scale = 1.0 / 16.0;
  return c;
}

TEST(Pyramid, LevelsAreBlockMeans) {
  const Tensor x = random_tensor({1, 2, 8, 12}, 1);
  const auto levels = downsample_pyramid(ag::constant(x));
  ASSERT_EQ(levels.size(), 3u);
  EXPECT_EQ(levels[0].value(), x);
  for (int f : {2, 4}) {
    const Tensor& p = levels[f == 2 ? 1 : 2].value();
    ASSERT_EQ(p.shape(), (Shape{1, 2, 8 / f, 12 / f}));
    for (int c = 0; c < 2; ++c)
      for (int y = 0; y < 8 / f; ++y)
        for (int xx = 0; xx < 12 / f; ++xx) {
          double s = 0.0;
          for (int dy = 0; dy < f; ++dy)
            for (int dx = 0; dx < f; ++dx) s += x.at(0, c, y * f + dy, xx * f + dx);
          EXPECT_NEAR(p.at(0, c, y, xx), s / (f * f), 1e-15);
        }
  }
  EXPECT_THROW(downsample_pyramid(ag::constant(Tensor({1, 1, 6, 8}))), std::invalid_argument);
}

TEST(Discriminator, PatchMapsShrinkBySixteen) {
  const auto d = build_discriminators(small_config(11), 2);
  const auto out = multiscale_forward(d, ag::constant(random_tensor({2, 8, 64, 128}, 3)),
                                      ag::constant(random_tensor({2, 3, 64, 128}, 4)));
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].patches.value().shape(), (Shape{2, 1, 4, 8}));
  EXPECT_EQ(out[1].patches.value().shape(), (Shape{2, 1, 2, 4}));
  EXPECT_EQ(out[2].patches.value().shape(), (Shape{2, 1, 1, 2}));
  for (const auto& o : out)
    for (double v : o.patches.value().values()) {
      EXPECT_GT(v, 0.0);
      EXPECT_LT(v, 1.0);
    }
}

TEST(Discriminator, SamePaddingRoundsUp) {
  auto sides = [](const ag::Padding& p) { return std::array{p.top, p.bottom, p.left, p.right}; };
  EXPECT_EQ(sides(detail::same_padding(16, 16, 4, 2)), (std::array{1, 1, 1, 1}));
  EXPECT_EQ(sides(detail::same_padding(5, 4, 4, 2)), (std::array{1, 2, 1, 1}));
  const auto d = build_discriminators(small_config(4), 5);
  const auto o = disc_forward(d.scales[0], d.config, ag::constant(random_tensor({1, 1, 20, 36}, 6)),
                              ag::constant(random_tensor({1, 3, 20, 36}, 7)));
  // 20 -> 10 -> 5 -> 3 -> 2, 36 -> 18 -> 9 -> 5 -> 3.
  EXPECT_EQ(o.patches.value().shape(), (Shape{1, 1, 2, 3}));
}

TEST(Discriminator, FirstFeatureIsTheConcatenatedInput) {
  const auto d = build_discriminators(small_config(5), 8);
  const Tensor cond = random_tensor({1, 2, 16, 16}, 9), cand = random_tensor({1, 3, 16, 16}, 10);
  const auto o = disc_forward(d.scales[1], d.config, ag::constant(cond), ag::constant(cand));
  ASSERT_EQ(o.features.size(), 5u);
  const Tensor& f = o.features[0].value();
  ASSERT_EQ(f.shape(), (Shape{1, 5, 16, 16}));
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      for (int c = 0; c < 2; ++c) EXPECT_EQ(f.at(0, c, y, x), cond.at(0, c, y, x));
      for (int c = 0; c < 3; ++c) EXPECT_EQ(f.at(0, 2 + c, y, x), cand.at(0, c, y, x));
    }
  EXPECT_EQ(o.features[4].value().shape(), (Shape{1, d.config.layer_width(3), 1, 1}));
}

TEST(Discriminator, ScalesOwnIndependentWeights) {
  const auto d = build_discriminators(small_config(11), 11);
  ASSERT_EQ(d.scales.size(), 3u);
  EXPECT_FALSE(d.scales[0] == d.scales[1]);
  EXPECT_FALSE(d.scales[1] == d.scales[2]);
  std::set<const double*> storage;
  for (const auto& s : d.scales)
    for (const auto& [_, v] : s) EXPECT_TRUE(storage.insert(v.value().data()).second);

  // A loss on one scale leaves the others without gradient.
  MultiScaleDiscriminatorParams p = d;
  const auto out = multiscale_forward(p, ag::constant(random_tensor({1, 8, 32, 32}, 12)),
                                      ag::constant(random_tensor({1, 3, 32, 32}, 13)));
  ag::backward(ag::sum(out[1].patches));
  for (int k : {0, 2})
    for (const auto& [_, v] : p.scales[k]) {
      for (double g : v.grad().values()) EXPECT_EQ(g, 0.0);
    }
  double mass = 0.0;
  for (const auto& [_, v] : p.scales[1])
    for (double g : v.grad().values()) mass += std::abs(g);
  EXPECT_GT(mass, 0.0);
}

TEST(Discriminator, RejectsMisalignedInputs) {
  const auto d = build_discriminators(small_config(11), 14);
  EXPECT_THROW(disc_forward(d.scales[0], d.config, ag::constant(Tensor({1, 8, 16, 16})),
                            ag::constant(Tensor({1, 3, 16, 32}))),
               std::invalid_argument);
  EXPECT_THROW(disc_forward(d.scales[0], d.config, ag::constant(Tensor({1, 7, 16, 16})),
                            ag::constant(Tensor({1, 3, 16, 16}))),
               std::invalid_argument);
  DiscriminatorConfig bad = small_config(11);
  bad.scales = 2;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Discriminator, LayerWidthsDoubleUpToTheCap) {
  DiscriminatorConfig c;
  EXPECT_EQ(c.layer_width(0), 64);
  EXPECT_EQ(c.layer_width(3), 512);
  c.max_channels = 256;
  EXPECT_EQ(c.layer_width(3), 256);
}

}  // namespace
}  // namespace seginpaint
