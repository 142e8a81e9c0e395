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

#include <random>
#include <set>

#include "seginpaint/data.hpp"
#include "seginpaint/image_io.hpp"
#include "seginpaint/logging.hpp"
#include "test_support.hpp"

namespace seginpaint {
namespace {

TEST(CategoryMapping, CityscapesTableIsTotal) {
  const CategoryMapping m = CategoryMapping::cityscapes();
  EXPECT_NO_THROW(m.validate());
  EXPECT_EQ(m.source_count, 35);
  EXPECT_EQ(m.target_count, 8);
  EXPECT_EQ(m.table[7], 0);    // road
  EXPECT_EQ(m.table[23], 4);   // sky
  EXPECT_EQ(m.table[26], 6);   // car
  EXPECT_EQ(m.table[0], 7);    // unlabeled
}

TEST(CategoryMapping, ValidateRejectsGapsAndOutOfRangeTargets) {
  CategoryMapping m = CategoryMapping::identity(4);
  m.table[2] = 9;
  EXPECT_THROW(m.validate(), ConfigError);

  m = CategoryMapping::identity(4);
  m.table[3] = 0;  // target 3 now unreachable
  EXPECT_THROW(m.validate(), ConfigError);

  m = CategoryMapping::identity(4);
  m.table.pop_back();
  EXPECT_THROW(m.validate(), ConfigError);
}

TEST(CategoryMapping, RemapRejectsUnknownSourceIds) {
  const CategoryMapping m = CategoryMapping::cityscapes();
  LabelMap raw(2, 2, 7);
  raw.at(1, 1) = 26;
  const LabelMap out = remap_labels(raw, m);
  EXPECT_EQ(out.at(0, 0), 0);
  EXPECT_EQ(out.at(1, 1), 6);
  raw.at(0, 1) = 40;
  EXPECT_THROW(remap_labels(raw, m), ConfigError);
}

TEST(OneHot, HolePixelsCarryTheZeroVector) {
  const LabelMap labels = testing::scene_labels(16);
  const HoleMask hole = HoleMask::rectangle(16, 16, {3, 4, 5, 6});
  const OneHotLabels oh = one_hot(labels, 8, hole);
  ASSERT_EQ(oh.depth(), 8);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      double sum = 0.0;
      for (int c = 0; c < 8; ++c) sum += oh.at(c, y, x);
      if (hole.at(y, x)) {
        EXPECT_EQ(sum, 0.0);
      } else {
        EXPECT_EQ(sum, 1.0);
        EXPECT_EQ(oh.at(labels.at(y, x), y, x), 1.0);
      }
    }
}

TEST(OneHot, RejectsIdsBeyondDepth) {
  LabelMap labels(2, 2, 0);
  labels.at(0, 0) = 3;
  EXPECT_THROW(one_hot(labels, 3), std::invalid_argument);
}

TEST(ArgmaxLabels, InvertsOneHotAndBreaksTiesLow) {
  const LabelMap labels = testing::scene_labels(16);
  EXPECT_EQ(argmax_labels(one_hot(labels, 8).to_batch()), labels);

  Tensor tie({1, 3, 1, 2}, 0.25);
  tie.at(0, 2, 0, 1) = 0.5;
  const LabelMap got = argmax_labels(tie);
  EXPECT_EQ(got.at(0, 0), 0);
  EXPECT_EQ(got.at(0, 1), 2);
}

TEST(HoleMasks, SideBoundsFollowRounding) {
  EXPECT_EQ(side_bounds(256, {}), (std::pair{32, 128}));
  EXPECT_EQ(side_bounds(100, {}), (std::pair{13, 50}));
  EXPECT_EQ(side_bounds(64, {0.25, 0.25}), (std::pair{16, 16}));
  EXPECT_THROW(side_bounds(3, {0.4, 0.5}), std::invalid_argument);
}

TEST(HoleMasks, DrawsAreSingleInBoundsRectangles) {
  std::mt19937_64 rng(5);
  const auto [lo, hi] = side_bounds(96, {});
  for (int i = 0; i < 2000; ++i) {
    const HoleMask m = generate_hole_mask(96, 80, {}, rng);
    ASSERT_TRUE(m.is_single_rectangle());
    const Rect r = m.bounding_rect();
    EXPECT_GE(r.height, lo);
    EXPECT_LE(r.height, hi);
    EXPECT_GE(r.width, side_bounds(80, {}).first);
    EXPECT_LE(r.width, side_bounds(80, {}).second);
    EXPECT_LE(r.y + r.height, 96);
    EXPECT_LE(r.x + r.width, 80);
  }
}

TEST(HoleMasks, RejectsBadRangesAndTinyFrames) {
  std::mt19937_64 rng(1);
  EXPECT_THROW(generate_hole_mask(64, 64, {0.6, 0.5}, rng), std::invalid_argument);
  EXPECT_THROW(generate_hole_mask(64, 64, {0.0, 0.5}, rng), std::invalid_argument);
  EXPECT_THROW(generate_hole_mask(4, 64, {}, rng), std::invalid_argument);
}

TEST(HoleMasks, BoundingRectAndRectangleTest) {
  HoleMask m = HoleMask::rectangle(10, 10, {2, 3, 4, 5});
  EXPECT_EQ(m.bounding_rect(), (Rect{2, 3, 4, 5}));
  EXPECT_TRUE(m.is_single_rectangle());
  m.set(9, 9, true);
  EXPECT_FALSE(m.is_single_rectangle());
  EXPECT_FALSE(HoleMask(4, 4).is_single_rectangle());
  EXPECT_TRUE(HoleMask(4, 4).bounding_rect().empty());
}

TEST(Samples, ApplyHoleFillsOnlyTheHole) {
  const Image img = testing::random_image(8, 8, 3);
  const HoleMask m = HoleMask::rectangle(8, 8, {1, 1, 3, 2});
  const Image out = apply_hole(img, m, 0.5);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) EXPECT_EQ(out.at(c, y, x), m.at(y, x) ? 0.5 : img.at(c, y, x));
  EXPECT_THROW(apply_hole(img, m, 2.0), std::invalid_argument);
  EXPECT_THROW(apply_hole(img, HoleMask(4, 4)), std::invalid_argument);
}

TEST(Samples, MakeSampleMasksImageAndLabels) {
  const Sample s = testing::scene_sample(16, {2, 2, 4, 4});
  EXPECT_EQ(s.masked_image, apply_hole(s.image, s.mask, 0.0));
  EXPECT_EQ(s.masked_labels, one_hot(s.labels, 8, s.mask));
  EXPECT_THROW(make_sample("x", Image(4, 4), LabelMap(4, 5), HoleMask(4, 4), 8), std::invalid_argument);
}

TEST(MixSeed, IsDeterministicAndSpreads) {
  EXPECT_EQ(mix_seed(1, 2, 3), mix_seed(1, 2, 3));
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 10; ++a)
    for (std::uint64_t b = 0; b < 10; ++b) seen.insert(mix_seed(a, b));
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_NE(mix_seed(1, 2), mix_seed(2, 1));
}

class DirectoryDatasetTest : public ::testing::Test {
 protected:
  void SetUp() override {
    testing::write_scene_dataset(dir_.path(), 3, 32, "train");
    testing::write_scene_dataset(dir_.path(), 2, 32, "test");
  }
  testing::TempDir dir_;
};

TEST_F(DirectoryDatasetTest, PairsFilesInNameOrder) {
  const DirectoryDataset ds(dir_.path(), Split::train, CategoryMapping::identity(8), 32, 4);
  ASSERT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.entries()[0].name, "img0");
  EXPECT_EQ(ds.entries()[2].name, "img2");
  const Sample s = ds.get(1, 0);
  EXPECT_EQ(s.name, "img1");
  EXPECT_EQ(s.image.height(), 32);
  EXPECT_TRUE(s.mask.is_single_rectangle());
  EXPECT_EQ(s.labels, io::read_labels(dir_ / "train/labels/img1.png"));
}

TEST_F(DirectoryDatasetTest, TrainMasksChangePerEpochTestMasksDoNot) {
  const DirectoryDataset train(dir_.path(), Split::train, CategoryMapping::identity(8), 32, 4);
  const DirectoryDataset test(dir_.path(), Split::test, CategoryMapping::identity(8), 32, 4);
  int changed = 0;
  for (std::uint64_t e = 1; e < 6; ++e) {
    changed += train.mask_for(0, e, 32, 32) != train.mask_for(0, 0, 32, 32);
    EXPECT_EQ(test.mask_for(0, e, 32, 32), test.mask_for(0, 0, 32, 32));
  }
  EXPECT_GT(changed, 0);
  EXPECT_NE(test.mask_for(0, 0, 32, 32), test.mask_for(1, 0, 32, 32));
  EXPECT_EQ(train.get(2, 3).mask, train.get(2, 3).mask);
}

TEST_F(DirectoryDatasetTest, SkipsImagesWithoutLabelsWithAWarning) {
  std::filesystem::remove(dir_ / "train/labels/img1.png");
  std::vector<std::string> warnings;
  const WarningSink prev = set_warning_sink([&](const std::string& m) { warnings.push_back(m); });
  const DirectoryDataset ds(dir_.path(), Split::train, CategoryMapping::identity(8), 32, 4);
  set_warning_sink(prev);
  EXPECT_EQ(ds.size(), 2u);
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("img1"), std::string::npos);
}

TEST_F(DirectoryDatasetTest, MissingDirectoryAndUnmappedIdsFail) {
  EXPECT_THROW(DirectoryDataset(dir_ / "nowhere", Split::train, CategoryMapping::identity(8), 32, 4), IoError);
  const DirectoryDataset narrow(dir_.path(), Split::train, CategoryMapping::identity(4), 32, 4);
  EXPECT_THROW(narrow.get(0, 0), ConfigError);
}

TEST_F(DirectoryDatasetTest, ResizesOnLoad) {
  const DirectoryDataset ds(dir_.path(), Split::train, CategoryMapping::identity(8), 16, 4);
  const Sample s = ds.get(0, 0);
  EXPECT_EQ(s.image.height(), 16);
  EXPECT_EQ(s.labels.width(), 16);
  EXPECT_LE(s.labels.max_id(), 7);
}

}  // namespace
}  // namespace seginpaint
