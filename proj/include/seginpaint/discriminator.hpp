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

// Three-scale conditional PatchGAN discriminators. Each scale sees the
// condition and the candidate concatenated along channels, average-pooled
// by 1, 2 and 4.

#ifndef SEGINPAINT_DISCRIMINATOR_HPP
#define SEGINPAINT_DISCRIMINATOR_HPP

#include <algorithm>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "seginpaint/autograd.hpp"
#include "seginpaint/errors.hpp"
#include "seginpaint/params.hpp"

namespace seginpaint {

struct DiscriminatorConfig {
  int scales = 3;
  int down_layers = 4;
  int base_channels = 64;
  int max_channels = 512;
  int kernel = 4;
  int stride = 2;
  int input_depth = 16;  // condition depth + candidate depth
  double width_scale = 1.0;
  double leaky_slope = 0.2;

  void validate() const {
    if (scales != 3 || down_layers != 4) throw ConfigError("discriminators use three scales of four layers");
    if (input_depth <= 0 || base_channels <= 0 || max_channels <= 0 || !(width_scale > 0.0)) {
      throw ConfigError("discriminator channel counts must be positive");
    }
  }

  int layer_width(int layer) const {
    return scaled_channels(std::min(base_channels << layer, max_channels), width_scale);
  }

  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DiscriminatorConfig, scales, down_layers, base_channels, max_channels, kernel,
                                   stride, input_depth, width_scale, leaky_slope)

/// One independent parameter set per scale; structure shared, weights never.
struct MultiScaleDiscriminatorParams {
  DiscriminatorConfig config;
  std::vector<ParamSet> scales;

  friend bool operator==(const MultiScaleDiscriminatorParams&, const MultiScaleDiscriminatorParams&) = default;
};

template <class Rng>
MultiScaleDiscriminatorParams build_discriminators(const DiscriminatorConfig& config, Rng& rng) {
  config.validate();
  MultiScaleDiscriminatorParams p{config, std::vector<ParamSet>(static_cast<std::size_t>(config.scales))};
  for (auto& set : p.scales) {
    int in = config.input_depth;
    for (int l = 0; l < config.down_layers; ++l) {
      const int out = config.layer_width(l);
      add_conv(set, "layer" + std::to_string(l), {in, out, config.kernel, config.stride, 1}, 0.02, rng);
      in = out;
    }
    add_conv(set, "pred", {in, 1, 3, 1, 1}, 0.02, rng);
  }
  return p;
}

inline MultiScaleDiscriminatorParams build_discriminators(const DiscriminatorConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return build_discriminators(config, rng);
}

/// [x, x averaged over 2x2 blocks, x averaged over 4x4 blocks].
inline std::vector<ag::Var> downsample_pyramid(const ag::Var& x) {
  const Tensor& t = x.value();
  if (t.rank() != 4 || t.h() % 4 != 0 || t.w() % 4 != 0) {
    throw std::invalid_argument("downsample_pyramid: " + shape_str(t.shape()) + " not divisible by 4");
  }
  return {x, ag::avg_pool(x, 2), ag::avg_pool(x, 4)};
}

struct DiscriminatorOutput {
  ag::Var patches;                // N x 1 x h' x w', values in (0, 1)
  std::vector<ag::Var> features;  // [input, layer0 .. layer3 activations]
};

namespace detail {
// Zero padding giving output ceil(n / stride), split as evenly as possible.
inline ag::Padding same_padding(int h, int w, int kernel, int stride) {
  auto split = [&](int n) {
    const int out = (n + stride - 1) / stride;
    const int total = std::max((out - 1) * stride + kernel - n, 0);
    return std::pair<int, int>{total / 2, total - total / 2};
  };
  auto [t, b] = split(h);
  auto [l, r] = split(w);
  return {t, b, l, r};
}
}  // namespace detail

/// Single-scale discriminator. For inputs divisible by 16 the patch map is
/// exactly (h / 16) x (w / 16).
inline DiscriminatorOutput disc_forward(const ParamSet& params, const DiscriminatorConfig& config,
                                        const ag::Var& condition, const ag::Var& candidate) {
  const Tensor& c = condition.value();
  const Tensor& x = candidate.value();
  if (c.rank() != 4 || x.rank() != 4 || c.n() != x.n() || c.h() != x.h() || c.w() != x.w()) {
    throw std::invalid_argument("discriminator: condition " + shape_str(c.shape()) + " and candidate " +
                                shape_str(x.shape()) + " are not aligned");
  }
  if (c.c() + x.c() != config.input_depth) {
    throw std::invalid_argument("discriminator: input depth " + std::to_string(c.c() + x.c()) + " != configured " +
                                std::to_string(config.input_depth));
  }
  DiscriminatorOutput out;
  ag::Var h = ag::concat_channels({condition, candidate});
  out.features.push_back(h);
  for (int l = 0; l < config.down_layers; ++l) {
    const std::string name = "layer" + std::to_string(l);
    const auto pad = detail::same_padding(h.value().h(), h.value().w(), config.kernel, config.stride);
    h = ag::conv2d(ag::pad2d(h, pad, ag::PadMode::zero), params.at(name + ".weight"), params.at(name + ".bias"),
                   config.stride, 1);
    if (l > 0) h = ag::instance_norm(h);
    h = ag::leaky_relu(h, config.leaky_slope);
    out.features.push_back(h);
  }
  h = ag::conv2d(ag::pad2d(h, {1, 1, 1, 1}, ag::PadMode::zero), params.at("pred.weight"), params.at("pred.bias"), 1, 1);
  out.patches = ag::sigmoid(h);
  return out;
}

/// All three scales on pyramids of the condition and the candidate.
inline std::vector<DiscriminatorOutput> multiscale_forward(const MultiScaleDiscriminatorParams& params,
                                                          const ag::Var& condition, const ag::Var& candidate) {
  const auto cond = downsample_pyramid(condition);
  const auto cand = downsample_pyramid(candidate);
  std::vector<DiscriminatorOutput> out;
  for (std::size_t k = 0; k < params.scales.size(); ++k) {
    out.push_back(disc_forward(params.scales[k], params.config, cond[k], cand[k]));
  }
  return out;
}

}  // namespace seginpaint

#endif  // SEGINPAINT_DISCRIMINATOR_HPP
