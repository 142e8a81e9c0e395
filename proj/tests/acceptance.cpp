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

// Acceptance suite: prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "seginpaint/data.hpp"
#include "seginpaint/discriminator.hpp"
#include "seginpaint/generator.hpp"
#include "seginpaint/image_io.hpp"
#include "seginpaint/losses.hpp"
#include "seginpaint/metrics.hpp"
#include "seginpaint/pipeline.hpp"
#include "seginpaint/training.hpp"
#include "test_support.hpp"

namespace si = seginpaint;
using si::ag::Var;
using si::Tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ------------------------------------------------------------------ shape / range

Outcome shape_and_range() {
  Outcome o;
  const auto t0 = Clock::now();
  const int classes = 8;
  const auto sp = si::build_generator(si::GeneratorConfig::label_completion(classes), 1);
  const auto sg = si::build_generator(si::GeneratorConfig::image_synthesis(classes), 2);
  si::ag::NoGradGuard guard;
  for (int size : {64, 128, 256}) {
    const Tensor labels_in = si::testing::random_tensor({1, classes, size, size}, 3, 0.0, 1.0);
    const Tensor image_in = si::testing::random_tensor({1, 3, size, size}, 4);
    const Tensor mask = si::HoleMask::rectangle(size, size, {size / 4, size / 4, size / 2, size / 2}).to_tensor();

    const Tensor probs = si::sp_forward(sp, si::ag::constant(labels_in), si::ag::constant(image_in), mask).value();
    o.check(probs.shape() == si::Shape({1, classes, size, size}), "SP shape at " + std::to_string(size));
    double worst = 0.0;
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        double s = 0.0;
        for (int c = 0; c < classes; ++c) s += probs.at(0, c, y, x);
        worst = std::max(worst, std::abs(s - 1.0));
      }
    o.check(worst <= 1e-5, "softmax sum off by " + fmt("%.3g", worst) + " at " + std::to_string(size));

    const Tensor img = si::sg_forward(sg, si::ag::constant(image_in), si::ag::constant(labels_in), mask).value();
    o.check(img.shape() == si::Shape({1, 3, size, size}), "SG shape at " + std::to_string(size));
    o.check(img.min() >= -1.0 && img.max() <= 1.0, "tanh output outside [-1, 1] at " + std::to_string(size));
  }
  const double secs = seconds_since(t0);
  o.check(secs < 60.0, "runtime " + fmt("%.1f", secs) + " s");
  o.detail = o.detail.empty() ? "full width, 64/128/256, " + fmt("%.1f", secs) + " s" : o.detail;
  return o;
}

// ------------------------------------------------------------------ loss identities

Outcome loss_identities() {
  Outcome o;
  const int size = 64;
  si::DiscriminatorConfig dc;
  dc.input_depth = 8 + 8;
  dc.width_scale = 0.25;
  const auto disc = si::build_discriminators(dc, 11);
  const Var cond = si::ag::constant(si::testing::random_tensor({1, 8, size, size}, 12));
  const Var real = si::ag::constant(si::testing::random_tensor({1, 8, size, size}, 13));
  const Var fake = si::ag::constant(si::testing::random_tensor({1, 8, size, size}, 14));
  const auto pr = si::feature_pyramids(si::multiscale_forward(disc, cond, real));
  const auto pf = si::feature_pyramids(si::multiscale_forward(disc, cond, fake));
  const Tensor hole = si::HoleMask::rectangle(size, size, {8, 8, 24, 24}).to_tensor();
  const Tensor no_hole({1, 1, size, size});

  const double fm_same = si::masked_feature_matching_loss(pr, pr, hole).value().item();
  const double fm_zero = si::masked_feature_matching_loss(pr, pf, no_hole).value().item();
  const double fm_diff = si::masked_feature_matching_loss(pr, pf, hole).value().item();
  o.check(fm_same == 0.0, "feature matching on identical pyramids = " + fmt("%.3g", fm_same));
  o.check(fm_zero == 0.0, "feature matching with empty mask = " + fmt("%.3g", fm_zero));
  o.check(fm_diff > 0.0, "feature matching does not register a difference");

  auto pnet = si::build_perceptual_net({}, 15);
  const Var img_a = si::ag::constant(si::testing::random_tensor({1, 3, size, size}, 16));
  const Var img_b = si::ag::constant(si::testing::random_tensor({1, 3, size, size}, 17));
  const double pp_same = si::perceptual_patch_loss(img_a, img_a, hole, pnet).value().item();
  const double pp_diff = si::perceptual_patch_loss(img_a, img_b, hole, pnet).value().item();
  for (auto& [_, w] : pnet.layer_weights) w.mutable_value()[0] = 0.0;
  const double pp_zero_w = si::perceptual_patch_loss(img_a, img_b, hole, pnet).value().item();
  o.check(pp_same == 0.0, "perceptual patch on identical patches = " + fmt("%.3g", pp_same));
  o.check(pp_zero_w == 0.0, "perceptual patch with zero layer weights = " + fmt("%.3g", pp_zero_w));
  o.check(pp_diff > 0.0, "perceptual patch does not register a difference");

  std::vector<Var> half;
  for (int s : {16, 8, 4}) half.push_back(si::ag::constant(Tensor({1, 1, s, s}, 0.5)));
  const double d = si::adversarial_loss_d(half, half).value().item();
  const double g = si::adversarial_loss_g(half).value().item();
  o.check(std::abs(d - 2.0 * std::numbers::ln2) <= 1e-6, "D loss at 0.5 = " + fmt("%.12g", d));
  o.check(std::abs(g - std::numbers::ln2) <= 1e-6, "G loss at 0.5 = " + fmt("%.12g", g));

  const si::LossWeights w;
  o.check(w.adversarial == 1.0 && w.perceptual == 10.0 && w.alex == 10.0, "default weights are not (1, 10, 10)");
  const Var adv = si::ag::constant(Tensor::scalar(0.37)), fm = si::ag::constant(Tensor::scalar(0.11)),
            pp = si::ag::constant(Tensor::scalar(0.05));
  const double sp_total = si::sp_objective(adv, fm, w).total.value().item();
  const double sg_total = si::sg_objective(adv, fm, pp, w).total.value().item();
  o.check(std::abs(sp_total - (1.0 * 0.37 + 10.0 * 0.11)) <= 1e-12, "SP total is not the weighted sum");
  o.check(std::abs(sg_total - (1.0 * 0.37 + 10.0 * 0.11 + 10.0 * 0.05)) <= 1e-12, "SG total is not the weighted sum");
  if (o.pass) o.detail = "D " + fmt("%.9f", d) + ", G " + fmt("%.9f", g);
  return o;
}

// ------------------------------------------------------------------ gradients

struct GradStats {
  std::size_t checked = 0;
  double worst = 0.0;
  std::string worst_name;
};

// Central differences on a sample of entries of every tensor in `params`.
void gradcheck_params(si::ParamSet& params, const std::function<double()>& objective, const std::string& prefix,
                      std::mt19937_64& rng, GradStats& stats) {
  constexpr double kStep = 1e-4;
  constexpr double kFloor = 1e-5;  // denominators below this compare absolutely
  constexpr std::size_t kPerTensor = 3;
  for (auto& [name, var] : params) {
    if (!var.requires_grad()) continue;
    Tensor& value = var.mutable_value();
    std::vector<std::size_t> picks(value.size());
    std::iota(picks.begin(), picks.end(), std::size_t{0});
    std::shuffle(picks.begin(), picks.end(), rng);
    picks.resize(std::min(kPerTensor, picks.size()));
    for (std::size_t i : picks) {
      const double analytic = var.grad()[i];
      const double numeric = si::testing::central_difference(objective, value[i], kStep);
      const double err = si::testing::relative_error(analytic, numeric, kFloor);
      ++stats.checked;
      if (err > stats.worst) {
        stats.worst = err;
        stats.worst_name = prefix + name + "[" + std::to_string(i) + "]";
      }
    }
  }
}

// Zero-initialized biases put every ReLU of a freshly built network exactly
// on its kink; a small random offset moves the check to a generic point.
void jitter_biases(si::ParamSet& params, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 0.05);
  for (auto& [name, var] : params)
    if (name.ends_with(".bias"))
      for (auto& v : var.mutable_value().values()) v = normal(rng);
}

// At 16x16 the generator bottleneck is 1x1, so instance normalization zeroes
// the residual trunk; those layers are checked at 32x32 in the unit tests.
GradStats gradcheck_objectives(std::mt19937_64& rng) {
  si::TrainConfig cfg;
  cfg.class_names = si::CategoryMapping::identity(8).target_names;
  cfg.width_scale = 1.0 / 16.0;
  cfg.image_size = 16;
  cfg.stage = si::Stage::joint;
  cfg.batch_size = 1;
  si::TrainState st = si::make_train_state(cfg);
  for (si::GanPair* net : {&*st.sp, &*st.sg}) {
    jitter_biases(net->gen.weights, rng);
    for (auto& scale : net->disc.scales) jitter_biases(scale, rng);
  }
  const si::Batch b = si::make_batch({si::testing::scene_sample(16, {4, 5, 7, 6}, 21, 8)}, 8);
  GradStats stats;

  {
    si::GanPair& net = *st.sp;
    auto objective = [&] {
      si::ag::NoGradGuard guard;
      return si::sp_generator_objective(net, b, si::sp_candidate(net, b), cfg.weights).total.value().item();
    };
    net.gen.weights.zero_grad();
    for (auto& scale : net.disc.scales) scale.zero_grad();
    si::ag::backward(si::sp_generator_objective(net, b, si::sp_candidate(net, b), cfg.weights).total);
    gradcheck_params(net.gen.weights, objective, "sp.gen.", rng, stats);
    net.gen.weights.zero_grad();

    // Discriminator side of the same pair.
    auto d_loss = [&] {
      const Var cand = si::ag::detach(si::sp_candidate(net, b));
      const auto r = si::multiscale_forward(net.disc, si::ag::constant(b.known_labels), si::ag::constant(b.labels));
      const auto f = si::multiscale_forward(net.disc, si::ag::constant(b.known_labels), cand);
      return si::adversarial_loss_d(si::patch_maps(r), si::patch_maps(f));
    };
    auto d_objective = [&] {
      si::ag::NoGradGuard guard;
      return d_loss().value().item();
    };
    for (auto& scale : net.disc.scales) scale.zero_grad();
    si::ag::backward(d_loss());
    for (std::size_t k = 0; k < net.disc.scales.size(); ++k) {
      gradcheck_params(net.disc.scales[k], d_objective, "sp.disc" + std::to_string(k) + ".", rng, stats);
      net.disc.scales[k].zero_grad();
    }
  }
  {
    si::GanPair& net = *st.sg;
    const Var labels = si::ag::constant(b.labels);
    auto total = [&] {
      const Var cand = si::sg_candidate(net, b, labels);
      return si::sg_generator_objective(net, *st.pnet, b, si::sg_condition(cfg, b, labels), cand, cfg.weights).total;
    };
    auto objective = [&] {
      si::ag::NoGradGuard guard;
      return total().value().item();
    };
    net.gen.weights.zero_grad();
    si::ag::backward(total());
    gradcheck_params(net.gen.weights, objective, "sg.gen.", rng, stats);
    net.gen.weights.zero_grad();
  }
  return stats;
}

Outcome gradients() {
  Outcome o;
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  const GradStats total = gradcheck_objectives(rng);
  const double secs = seconds_since(t0);
  o.check(total.worst <= 1e-3, "worst relative error " + fmt("%.3g", total.worst) + " at " + total.worst_name);
  o.check(secs < 300.0, "runtime " + fmt("%.1f", secs) + " s");
  if (o.pass) {
    o.detail = std::to_string(total.checked) + " entries, worst rel err " + fmt("%.2e", total.worst) + " (" +
               total.worst_name + "), " + fmt("%.1f", secs) + " s";
  }
  return o;
}

// ------------------------------------------------------------------ discriminator

Outcome discriminator_arithmetic() {
  Outcome o;
  si::DiscriminatorConfig dc;
  dc.input_depth = 8 + 8;
  const auto disc = si::build_discriminators(dc, 31);
  si::ag::NoGradGuard guard;
  const Var cond = si::ag::constant(si::testing::random_tensor({1, 8, 256, 256}, 32));
  const Var cand = si::ag::constant(si::testing::random_tensor({1, 8, 256, 256}, 33));
  const auto pyramid = si::downsample_pyramid(cand);
  const int inputs[] = {256, 128, 64};
  const int expected[] = {16, 8, 4};
  for (int k = 0; k < 3; ++k) {
    o.check(pyramid[k].value().h() == inputs[k], "pyramid level " + std::to_string(k) + " has wrong size");
  }
  const auto outs = si::multiscale_forward(disc, cond, cand);
  o.check(outs.size() == 3, "expected three scales");
  std::string sizes;
  for (std::size_t k = 0; k < outs.size() && k < 3; ++k) {
    const Tensor& p = outs[k].patches.value();
    sizes += (k ? "/" : "") + std::to_string(p.h());
    o.check(p.h() == expected[k] && p.w() == expected[k] && p.c() == 1,
            "scale " + std::to_string(k) + " patch map " + si::shape_str(p.shape()));
  }
  if (o.pass) o.detail = "patch maps " + sizes + " for inputs 256/128/64";
  return o;
}

// ------------------------------------------------------------------ metrics

// Sliding-window SSIM on luma with a full 2-D Gaussian window; written
// without the library's separable filter.
double brute_force_ssim(const si::Image& a, const si::Image& b) {
  const int H = a.height(), W = a.width(), win = 11;
  const double sigma = 1.5, L = 255.0, c1 = (0.01 * L) * (0.01 * L), c2 = (0.03 * L) * (0.03 * L);
  auto luma = [](const si::Image& img, int y, int x) {
    double v[3];
    for (int c = 0; c < 3; ++c) v[c] = si::to_display(img.at(c, y, x));
    return 0.299 * v[0] + 0.587 * v[1] + 0.114 * v[2];
  };
  std::vector<double> kernel(win * win);
  double ksum = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double dy = i - win / 2, dx = j - win / 2;
      kernel[i * win + j] = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
      ksum += kernel[i * win + j];
    }
  for (auto& k : kernel) k /= ksum;
  double total = 0.0;
  int count = 0;
  for (int y0 = 0; y0 + win <= H; ++y0)
    for (int x0 = 0; x0 + win <= W; ++x0) {
      double mx = 0, my = 0, sxx = 0, syy = 0, sxy = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double k = kernel[i * win + j];
          const double p = luma(a, y0 + i, x0 + j), q = luma(b, y0 + i, x0 + j);
          mx += k * p;
          my += k * q;
          sxx += k * p * p;
          syy += k * q * q;
          sxy += k * p * q;
        }
      const double vx = sxx - mx * mx, vy = syy - my * my, cov = sxy - mx * my;
      total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  return total / count;
}

si::Image display_image(int h, int w, std::uint64_t seed, int hi = 255) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, hi);
  si::Image img(h, w);
  for (auto& v : img.tensor().values()) v = si::from_display(static_cast<std::uint8_t>(u(rng)));
  return img;
}

Outcome metric_oracles() {
  Outcome o;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const si::Image a = display_image(16, 16, 100 + s);
    si::Image b = display_image(16, 16, 200 + s);
    if (s % 2 == 1) {
      // Correlated pair: a plus small noise.
      std::mt19937_64 rng(300 + s);
      std::uniform_int_distribution<int> u(-12, 12);
      for (std::size_t i = 0; i < b.tensor().size(); ++i) {
        const int v = std::clamp(si::to_display(a.tensor()[i]) + u(rng), 0, 255);
        b.tensor()[i] = si::from_display(static_cast<std::uint8_t>(v));
      }
    }
    worst = std::max(worst, std::abs(si::metrics::ssim(a, b) - brute_force_ssim(a, b)));
  }
  o.check(worst <= 1e-6, "SSIM differs from brute force by " + fmt("%.3g", worst));

  const si::Image gt = display_image(32, 32, 400, 254);
  si::Image shifted = gt;
  for (auto& v : shifted.tensor().values()) v = si::from_display(static_cast<std::uint8_t>(si::to_display(v) + 1));
  const double psnr = si::metrics::psnr(shifted, gt);
  o.check(std::abs(psnr - 48.1308) <= 1e-3, "PSNR of +1 offset = " + fmt("%.6f", psnr));

  const si::Image same = display_image(32, 32, 500);
  o.check(si::metrics::l1_error(same, same) == 0.0, "l1 on identical pair");
  o.check(si::metrics::l2_error(same, same) == 0.0, "l2 on identical pair");
  o.check(si::metrics::ssim(same, same) == 1.0, "SSIM on identical pair = " + fmt("%.17g", si::metrics::ssim(same, same)));
  o.check(si::metrics::psnr(same, same) == si::metrics::kPsnrCap, "PSNR on identical pair is not the cap");
  if (o.pass) o.detail = "SSIM max dev " + fmt("%.2e", worst) + ", PSNR(+1) " + fmt("%.4f", psnr) + " dB";
  return o;
}

// ------------------------------------------------------------------ overfit smoke

si::TrainConfig smoke_config(si::Stage stage) {
  si::TrainConfig cfg;
  cfg.stage = stage;
  cfg.class_names = si::CategoryMapping::cityscapes().target_names;
  cfg.image_size = 64;
  cfg.width_scale = 1.0 / 8.0;
  cfg.max_steps = 200;
  cfg.epochs = 1000;
  cfg.decay_start = 1000;
  cfg.checkpoint_every = 0;
  cfg.seed = 3;
  return cfg;
}

si::Sample smoke_sample() { return si::testing::scene_sample(64, {18, 14, 28, 30}, 5, 8); }

double sp_agreement(const si::TrainState& st, const si::Sample& s) {
  const Tensor probs = si::sp_forward(st.sp->gen, s.masked_labels, s.masked_image, s.mask);
  const si::LabelMap pred = si::argmax_labels(probs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.ids().size(); ++i) hit += s.mask.bits()[i] && pred.ids()[i] == s.labels.ids()[i];
  return static_cast<double>(hit) / static_cast<double>(s.mask.count());
}

double sg_hole_l1(const si::TrainState& st, const si::Sample& s) {
  const si::Image raw = si::sg_forward(st.sg->gen, s.masked_image, si::one_hot(s.labels, 8).to_batch(), s.mask);
  return si::metrics::l1_error(si::composite(raw, s.image, s.mask), s.image, &s.mask);
}

Outcome overfit_smoke() {
  Outcome o;
  const auto t0 = Clock::now();
  const si::Sample s = smoke_sample();
  const si::InMemoryDataset data({s}, 8);

  const si::TrainState sp = si::train_stage(smoke_config(si::Stage::sp), data);
  const double agreement = sp_agreement(sp, s);
  o.check(agreement >= 0.90, "SP in-hole agreement " + fmt("%.3f", agreement));

  const auto sg_cfg = smoke_config(si::Stage::sg);
  const double before = sg_hole_l1(si::make_train_state(sg_cfg), s);
  const si::TrainState sg = si::train_stage(sg_cfg, data);
  const double after = sg_hole_l1(sg, s);
  const double drop = 1.0 - after / before;
  o.check(drop >= 0.5, "SG in-hole l1 " + fmt("%.2f", before) + " -> " + fmt("%.2f", after));

  const double secs = seconds_since(t0);
  o.check(secs < 600.0, "runtime " + fmt("%.1f", secs) + " s");
  if (o.pass) {
    o.detail = "SP agreement " + fmt("%.3f", agreement) + ", SG l1 " + fmt("%.2f", before) + " -> " +
               fmt("%.2f", after) + " (" + fmt("%.0f", 100 * drop) + "% drop), " + fmt("%.1f", secs) + " s";
  }
  return o;
}

// ------------------------------------------------------------------ pipeline

Outcome pipeline_invariants() {
  Outcome o;
  const int size = 64;
  const si::Rect hole{20, 16, 24, 28};
  const si::Sample s = si::testing::scene_sample(size, hole, 9, 8);
  const auto model = si::random_model(si::CategoryMapping::cityscapes().target_names, 1.0 / 8.0, 41);
  const si::GroundTruthSegmenter seg(s);

  const si::InpaintResult base = si::inpaint(s.image, s.mask, seg, model);
  bool outside_same = true;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        if (!s.mask.at(y, x)) outside_same = outside_same && base.image.at(c, y, x) == s.image.at(c, y, x);
  o.check(outside_same, "completed image differs from the input outside the hole");

  const si::InpaintResult replay = si::inpaint(s.image, s.mask, seg, model, base.proposed_labels);
  o.check(replay.image == base.image, "re-submitting the proposed labels changed the output");

  si::LabelMap edit_a = base.proposed_labels, edit_b = base.proposed_labels;
  for (int y = hole.y; y < hole.y + hole.height; ++y)
    for (int x = hole.x; x < hole.x + hole.width; ++x) {
      edit_a.at(y, x) = x < hole.x + hole.width / 2 ? 6 : 3;  // vehicle | vegetation
      edit_b.at(y, x) = 0;                                    // road
    }
  const si::Image out_a = si::inpaint(s.image, s.mask, seg, model, edit_a).image;
  const si::Image out_b = si::inpaint(s.image, s.mask, seg, model, edit_b).image;
  std::size_t inside_diff = 0, outside_diff = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const bool differ = out_a.at(c, y, x) != out_b.at(c, y, x);
        (s.mask.at(y, x) ? inside_diff : outside_diff) += differ;
      }
  o.check(inside_diff > 0, "distinct edits produced identical holes");
  o.check(outside_diff == 0, std::to_string(outside_diff) + " values differ outside the hole between edits");
  if (o.pass) o.detail = "edits differ at " + std::to_string(inside_diff) + " in-hole values, 0 outside";
  return o;
}

// ------------------------------------------------------------------ masks

Outcome mask_protocol() {
  Outcome o;
  const int size = 256;
  int hmin = size, hmax = 0, wmin = size, wmax = 0;
  bool in_bounds = true, rectangles = true;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    std::mt19937_64 rng(si::mix_seed(7, i + 1, i));
    const si::HoleMask m = si::generate_hole_mask(size, size, si::HoleRange{}, rng);
    const si::Rect r = m.bounding_rect();
    rectangles = rectangles && m.is_single_rectangle();
    in_bounds = in_bounds && r.y >= 0 && r.x >= 0 && r.y + r.height <= size && r.x + r.width <= size;
    hmin = std::min(hmin, r.height);
    hmax = std::max(hmax, r.height);
    wmin = std::min(wmin, r.width);
    wmax = std::max(wmax, r.width);
  }
  o.check(hmin == 32 && hmax == 128, "heights span [" + std::to_string(hmin) + ", " + std::to_string(hmax) + "]");
  o.check(wmin == 32 && wmax == 128, "widths span [" + std::to_string(wmin) + ", " + std::to_string(wmax) + "]");
  o.check(in_bounds, "a rectangle leaves the frame");
  o.check(rectangles, "a mask is not a single rectangle");
  if (o.pass) o.detail = "10000 draws, sides span [32, 128] in both axes";
  return o;
}

// ------------------------------------------------------------------ determinism

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

Outcome determinism() {
  Outcome o;
  si::testing::TempDir dir;
  si::testing::write_scene_dataset(dir.path(), 3, 32);
  si::TrainConfig cfg;
  cfg.stage = si::Stage::joint;
  cfg.class_names = si::CategoryMapping::identity(8).target_names;
  cfg.image_size = 32;
  cfg.width_scale = 1.0 / 16.0;
  cfg.epochs = 100;
  cfg.decay_start = 10;
  cfg.checkpoint_every = 0;
  cfg.seed = 17;
  cfg.max_steps = 50;
  const si::DirectoryDataset data(dir.path(), si::Split::train, si::CategoryMapping::identity(8), 32, cfg.seed);

  auto run = [&](si::TrainConfig c, std::optional<si::TrainState> resume, std::string& log) {
    std::ostringstream os;
    si::TrainHooks hooks;
    hooks.loss_log = &os;
    si::TrainState st = si::train_stage(c, data, std::move(resume), hooks);
    log += os.str();
    return st;
  };
  std::string log_a, log_b, log_resumed;
  const si::TrainState a = run(cfg, std::nullopt, log_a);
  const si::TrainState b = run(cfg, std::nullopt, log_b);
  o.check(log_a == log_b, "two runs produced different loss logs");
  o.check(lines_of(log_a).size() == 50, "expected 50 log lines, got " + std::to_string(lines_of(log_a).size()));
  o.check(a == b, "two runs ended in different states");

  si::TrainConfig first = cfg;
  first.max_steps = 25;
  const si::TrainState half = run(first, std::nullopt, log_resumed);
  const auto ckpt = dir.path() / "half.ckpt";
  si::save_checkpoint(half, ckpt);
  si::TrainState loaded = si::load_checkpoint(ckpt);
  o.check(loaded == half, "checkpoint round trip changed the state");
  const si::TrainState resumed = run(cfg, std::move(loaded), log_resumed);
  o.check(log_resumed == log_a, "resumed log differs from the uninterrupted run");
  o.check(resumed == a, "resumed final state differs from the uninterrupted run");
  if (o.pass) o.detail = "joint stage, 50 steps over 3 files, interrupted at 25";
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {"shape_range", shape_and_range},
      {"loss_identities", loss_identities},
      {"gradients", gradients},
      {"discriminator_arithmetic", discriminator_arithmetic},
      {"metric_oracles", metric_oracles},
      {"overfit_smoke", overfit_smoke},
      {"pipeline_invariants", pipeline_invariants},
      {"mask_protocol", mask_protocol},
      {"determinism", determinism},
  };
  si::set_warning_sink([](const std::string&) {});
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << c.name << (o.detail.empty() ? "" : ": " + o.detail) << std::endl;
  }
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
