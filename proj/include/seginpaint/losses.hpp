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

// Training objectives:
//   - multi-scale adversarial terms (discriminator / non-saturating generator)
//   - hole-masked L1 matching of discriminator feature pyramids, layer 0
//     being the discriminator input itself
//   - layer-weighted squared feature distance of hole patches under a fixed
//     feature extractor
//   - the lambda-weighted totals for both generators

#ifndef SEGINPAINT_LOSSES_HPP
#define SEGINPAINT_LOSSES_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "seginpaint/autograd.hpp"
#include "seginpaint/discriminator.hpp"
#include "seginpaint/logging.hpp"
#include "seginpaint/params.hpp"
#include "seginpaint/types.hpp"

namespace seginpaint {

inline constexpr double kProbEps = 1e-7;

struct LossWeights {
  double adversarial = 1.0;
  double perceptual = 10.0;
  double alex = 10.0;

  void validate() const {
    if (adversarial < 0.0 || perceptual < 0.0 || alex < 0.0) throw ConfigError("loss weights must be non-negative");
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LossWeights, adversarial, perceptual, alex)

struct LossReport {
  double adversarial = 0.0;
  double feature_matching = 0.0;
  double perceptual_patch = 0.0;
  double total = 0.0;
};

// ------------------------------------------------------------------ adversarial

inline ag::Var one_minus(const ag::Var& p) { return ag::sub(ag::constant(Tensor(p.shape(), 1.0)), p); }

/// Mean over scales of the per-scale patch means of
/// -[log D(real) + log(1 - D(fake))].
inline ag::Var adversarial_loss_d(const std::vector<ag::Var>& pred_real, const std::vector<ag::Var>& pred_fake) {
  if (pred_real.size() != pred_fake.size() || pred_real.empty()) {
    throw std::invalid_argument("adversarial_loss_d: scale count mismatch");
  }
  ag::Var total;
  for (std::size_t k = 0; k < pred_real.size(); ++k) {
    pred_real[k].value().require_same_shape(pred_fake[k].value(), "adversarial_loss_d");
    ag::Var term = ag::add(ag::mean(ag::log_clamped(pred_real[k], kProbEps)),
                           ag::mean(ag::log_clamped(one_minus(pred_fake[k]), kProbEps)));
    total = total.defined() ? ag::add(total, term) : term;
  }
  return ag::scale(total, -1.0 / static_cast<double>(pred_real.size()));
}

/// Non-saturating generator term: mean over scales of mean(-log D(fake)).
inline ag::Var adversarial_loss_g(const std::vector<ag::Var>& pred_fake) {
  if (pred_fake.empty()) throw std::invalid_argument("adversarial_loss_g: no scales");
  ag::Var total;
  for (const auto& p : pred_fake) {
    ag::Var term = ag::mean(ag::log_clamped(p, kProbEps));
    total = total.defined() ? ag::add(total, term) : term;
  }
  return ag::scale(total, -1.0 / static_cast<double>(pred_fake.size()));
}

inline std::vector<ag::Var> patch_maps(const std::vector<DiscriminatorOutput>& outs) {
  std::vector<ag::Var> maps;
  for (const auto& o : outs) maps.push_back(o.patches);
  return maps;
}

// ------------------------------------------------------------------ feature matching

/// Nearest-neighbour reduction of an N x 1 x H x W mask: output (i, j)
/// samples source (floor(i * H / h), floor(j * W / w)).
inline Tensor downsample_mask(const Tensor& mask, int target_h, int target_w) {
  if (target_h > mask.h() || target_w > mask.w() || target_h <= 0 || target_w <= 0) {
    throw std::invalid_argument("downsample_mask: target larger than mask");
  }
  Tensor out({mask.n(), 1, target_h, target_w});
  for (int n = 0; n < mask.n(); ++n)
    for (int i = 0; i < target_h; ++i) {
      const int sy = static_cast<int>(static_cast<long long>(i) * mask.h() / target_h);
      for (int j = 0; j < target_w; ++j) {
        const int sx = static_cast<int>(static_cast<long long>(j) * mask.w() / target_w);
        out.at(n, 0, i, j) = mask.at(n, 0, sy, sx);
      }
    }
  return out;
}

inline HoleMask downsample_mask(const HoleMask& mask, int target_h, int target_w) {
  const Tensor t = downsample_mask(mask.to_tensor(), target_h, target_w);
  HoleMask out(target_h, target_w);
  for (int i = 0; i < target_h; ++i)
    for (int j = 0; j < target_w; ++j) out.set(i, j, t.at(0, 0, i, j) != 0.0);
  return out;
}

/// Sum over scales and layers of (1 / (H_l W_l)) * sum_hw ||M_l * (real - fake)||_1,
/// averaged over the batch. Real features are treated as constants.
inline ag::Var masked_feature_matching_loss(const std::vector<std::vector<ag::Var>>& real,
                                            const std::vector<std::vector<ag::Var>>& fake, const Tensor& mask) {
  if (real.size() != fake.size()) throw std::invalid_argument("feature matching: scale count mismatch");
  ag::Var total;
  for (std::size_t k = 0; k < real.size(); ++k) {
    if (real[k].size() != fake[k].size()) {
      throw std::invalid_argument("feature matching: pyramid depth mismatch at scale " + std::to_string(k));
    }
    for (std::size_t l = 0; l < real[k].size(); ++l) {
      const Tensor& f = fake[k][l].value();
      real[k][l].value().require_same_shape(f, "feature matching");
      const Tensor m = downsample_mask(mask, f.h(), f.w());
      Tensor weight(f.shape());
      const double norm = 1.0 / (static_cast<double>(f.h()) * f.w() * f.n());
      for (int n = 0; n < f.n(); ++n)
        for (int c = 0; c < f.c(); ++c)
          for (int y = 0; y < f.h(); ++y)
            for (int x = 0; x < f.w(); ++x) weight.at(n, c, y, x) = m.at(n, 0, y, x) * norm;
      ag::Var term = ag::weighted_abs_diff_sum(ag::detach(real[k][l]), fake[k][l], weight);
      total = total.defined() ? ag::add(total, term) : term;
    }
  }
  return total.defined() ? total : ag::constant(Tensor::scalar(0.0));
}

inline std::vector<std::vector<ag::Var>> feature_pyramids(const std::vector<DiscriminatorOutput>& outs) {
  std::vector<std::vector<ag::Var>> p;
  for (const auto& o : outs) p.push_back(o.features);
  return p;
}

// ------------------------------------------------------------------ perceptual patch

enum class FeatureSource { random, proxy, external };

NLOHMANN_JSON_SERIALIZE_ENUM(FeatureSource, {{FeatureSource::random, "random"},
                                             {FeatureSource::proxy, "proxy"},
                                             {FeatureSource::external, "external"}})

struct PerceptualNetConfig {
  int input_size = 64;
  std::vector<int> channels{16, 32, 64, 96, 128};
  FeatureSource source = FeatureSource::random;
  bool train_layer_weights = false;

  friend bool operator==(const PerceptualNetConfig&, const PerceptualNetConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PerceptualNetConfig, input_size, channels, source, train_layer_weights)

/// Fixed five-stage feature extractor plus one non-negative scalar weight
/// per stage.
struct PerceptualNet {
  PerceptualNetConfig config;
  ParamSet features;       // frozen
  ParamSet layer_weights;  // "w0".."w4", rank 0

  std::size_t layers() const { return config.channels.size(); }

  /// Clamps every layer weight at zero.
  void project() {
    for (auto& [_, w] : layer_weights) w.mutable_value()[0] = std::max(0.0, w.value()[0]);
  }

  friend bool operator==(const PerceptualNet&, const PerceptualNet&) = default;
};

template <class Rng>
PerceptualNet build_perceptual_net(const PerceptualNetConfig& config, Rng& rng) {
  if (config.channels.empty() || config.input_size < 1) throw ConfigError("perceptual net needs stages");
  PerceptualNet net{config, {}, {}};
  int in = 3;
  for (std::size_t l = 0; l < config.channels.size(); ++l) {
    const int out = config.channels[l];
    Tensor w({out, in, 3, 3});
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (9.0 * in)));
    for (auto& v : w.values()) v = normal(rng);
    net.features.add("stage" + std::to_string(l) + ".weight", std::move(w), false);
    net.features.add("stage" + std::to_string(l) + ".bias", Tensor({out}, 0.0), false);
    net.layer_weights.add("w" + std::to_string(l), Tensor::scalar(1.0 / static_cast<double>(config.channels.size())),
                          config.train_layer_weights);
    in = out;
  }
  return net;
}

inline PerceptualNet build_perceptual_net(const PerceptualNetConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return build_perceptual_net(config, rng);
}

/// Stage activations: 3x3 stride-2 conv (zero pad 1) followed by ReLU.
inline std::vector<ag::Var> perceptual_features(const PerceptualNet& net, const ag::Var& x) {
  std::vector<ag::Var> out;
  ag::Var h = x;
  for (std::size_t l = 0; l < net.layers(); ++l) {
    const std::string name = "stage" + std::to_string(l);
    h = ag::conv2d(ag::pad2d(h, {1, 1, 1, 1}, ag::PadMode::zero), net.features.at(name + ".weight"),
                   net.features.at(name + ".bias"), 2, 1);
    h = ag::relu(h);
    out.push_back(h);
  }
  return out;
}

/// Bounding rectangle of every sample's hole in an N x 1 x H x W mask.
inline std::vector<ag::Box> hole_boxes(const Tensor& mask) {
  std::vector<ag::Box> boxes;
  for (int n = 0; n < mask.n(); ++n) {
    int y0 = mask.h(), y1 = -1, x0 = mask.w(), x1 = -1;
    for (int y = 0; y < mask.h(); ++y)
      for (int x = 0; x < mask.w(); ++x)
        if (mask.at(n, 0, y, x) != 0.0) {
          y0 = std::min(y0, y);
          y1 = std::max(y1, y);
          x0 = std::min(x0, x);
          x1 = std::max(x1, x);
        }
    boxes.push_back(y1 < 0 ? ag::Box{} : ag::Box{y0, x0, y1 - y0 + 1, x1 - x0 + 1});
  }
  return boxes;
}

/// sum_l w_l^2 / (H_l W_l) * ||psi_l(fake patch) - psi_l(real patch)||^2,
/// averaged over the batch. Patches are the hole bounding boxes resized to
/// the extractor's input size. Samples without a hole contribute 0.
inline ag::Var perceptual_patch_loss(const ag::Var& fake, const ag::Var& real, const Tensor& mask,
                                     const PerceptualNet& net) {
  fake.value().require_same_shape(real.value(), "perceptual_patch_loss");
  const auto boxes = hole_boxes(mask);
  bool any = false;
  for (const auto& b : boxes) any = any || (b.height > 0 && b.width > 0);
  if (!any) {
    warn("perceptual patch loss: empty hole, returning 0");
    return ag::constant(Tensor::scalar(0.0));
  }
  const int s = net.config.input_size;
  const auto ff = perceptual_features(net, ag::crop_resize_bilinear(fake, boxes, s, s));
  std::vector<ag::Var> rf;
  {
    ag::NoGradGuard guard;
    rf = perceptual_features(net, ag::crop_resize_bilinear(ag::detach(real), boxes, s, s));
  }
  ag::Var total;
  for (std::size_t l = 0; l < ff.size(); ++l) {
    const Tensor& v = ff[l].value();
    const double norm = 1.0 / (static_cast<double>(v.h()) * v.w() * v.n());
    const ag::Var& w = net.layer_weights.at("w" + std::to_string(l));
    ag::Var d = ag::scale(ag::squared_sum(ag::sub(ff[l], rf[l])), norm);
    ag::Var term = ag::scale_by(ag::mul(w, w), d);
    total = total.defined() ? ag::add(total, term) : term;
  }
  return total;
}

// ------------------------------------------------------------------ objectives

struct Objective {
  ag::Var total;
  LossReport report;
};

inline LossReport sp_objective(double adversarial, double feature_matching, const LossWeights& w = {}) {
  return {adversarial, feature_matching, 0.0, w.adversarial * adversarial + w.perceptual * feature_matching};
}

inline LossReport sg_objective(double adversarial, double feature_matching, double perceptual_patch,
                               const LossWeights& w = {}) {
  return {adversarial, feature_matching, perceptual_patch,
          w.adversarial * adversarial + w.perceptual * feature_matching + w.alex * perceptual_patch};
}

inline Objective sp_objective(const ag::Var& adversarial, const ag::Var& feature_matching, const LossWeights& w = {}) {
  Objective o;
  o.total = ag::add(ag::scale(adversarial, w.adversarial), ag::scale(feature_matching, w.perceptual));
  o.report = sp_objective(adversarial.value().item(), feature_matching.value().item(), w);
  o.report.total = o.total.value().item();
  return o;
}

inline Objective sg_objective(const ag::Var& adversarial, const ag::Var& feature_matching,
                              const ag::Var& perceptual_patch, const LossWeights& w = {}) {
  Objective o;
  o.total = ag::add(ag::add(ag::scale(adversarial, w.adversarial), ag::scale(feature_matching, w.perceptual)),
                    ag::scale(perceptual_patch, w.alex));
  o.report = sg_objective(adversarial.value().item(), feature_matching.value().item(),
                          perceptual_patch.value().item(), w);
  o.report.total = o.total.value().item();
  return o;
}

}  // namespace seginpaint

#endif  // SEGINPAINT_LOSSES_HPP
