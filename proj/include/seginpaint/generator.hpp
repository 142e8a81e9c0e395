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

// Fully convolutional generator shared by the label-completion network
// (softmax head) and the image-synthesis network (tanh head):
//
//   7x7 stride-2 conv -> three 3x3 stride-2 convs -> nine dilated residual
//   blocks -> four (nearest x2, 3x3 conv) stages -> 7x7 conv -> head
//
// Every conv except the last is followed by normalization and ReLU.
// Padding is reflective with pad = floor(k / 2) * dilation.

#ifndef SEGINPAINT_GENERATOR_HPP
#define SEGINPAINT_GENERATOR_HPP

#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "seginpaint/autograd.hpp"
#include "seginpaint/errors.hpp"
#include "seginpaint/params.hpp"
#include "seginpaint/types.hpp"

namespace seginpaint {

enum class Head { softmax, tanh };
enum class NormKind { instance, batch };

NLOHMANN_JSON_SERIALIZE_ENUM(Head, {{Head::softmax, "softmax"}, {Head::tanh, "tanh"}})
NLOHMANN_JSON_SERIALIZE_ENUM(NormKind, {{NormKind::instance, "instance"}, {NormKind::batch, "batch"}})

struct GeneratorConfig {
  int input_depth = 12;
  int output_depth = 8;
  Head head = Head::softmax;
  std::vector<int> down_channels{64, 128, 256, 512};
  int res_channels = 512;
  std::vector<int> res_dilations{2, 2, 2, 4, 4, 4, 8, 8, 8};
  std::vector<int> up_channels{512, 256, 128, 64};
  int first_last_kernel = 7;
  int inner_kernel = 3;
  double base_width_scale = 1.0;
  NormKind norm = NormKind::instance;

  /// Label completion: input = one-hot labels (C) + image (3) + mask (1).
  static GeneratorConfig label_completion(int classes, double width_scale = 1.0) {
    GeneratorConfig c;
    c.input_depth = classes + 3 + 1;
    c.output_depth = classes;
    c.head = Head::softmax;
    c.base_width_scale = width_scale;
    return c;
  }

  /// Image synthesis: input = image (3) + label map (C) + mask (1).
  static GeneratorConfig image_synthesis(int classes, double width_scale = 1.0) {
    GeneratorConfig c;
    c.input_depth = 3 + classes + 1;
    c.output_depth = 3;
    c.head = Head::tanh;
    c.base_width_scale = width_scale;
    return c;
  }

  int width(int channels) const { return scaled_channels(channels, base_width_scale); }

  void validate() const {
    if (down_channels.size() != 4 || up_channels.size() != 4) {
      throw ConfigError("generator needs exactly four down- and four up-sampling layers");
    }
    if (res_dilations.size() != 9) throw ConfigError("generator needs exactly nine residual blocks");
    if (!(base_width_scale > 0.0)) throw ConfigError("base_width_scale must be positive");
    if (input_depth <= 0 || output_depth <= 0) throw ConfigError("generator depths must be positive");
    for (int c : down_channels)
      if (c <= 0) throw ConfigError("channel counts must be positive");
    for (int c : up_channels)
      if (c <= 0) throw ConfigError("channel counts must be positive");
    if (res_channels <= 0) throw ConfigError("channel counts must be positive");
    for (std::size_t i = 0; i < res_dilations.size(); ++i) {
      if (res_dilations[i] <= 0) throw ConfigError("dilations must be positive");
      if (i > 0 && res_dilations[i] < res_dilations[i - 1]) throw ConfigError("dilations must be non-decreasing");
    }
    if (width(down_channels.back()) != width(res_channels)) {
      throw ConfigError("last down-sampling width must equal the residual width");
    }
    if (first_last_kernel % 2 == 0 || inner_kernel % 2 == 0) throw ConfigError("kernel sizes must be odd");
  }

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(GeneratorConfig, input_depth, output_depth, head, down_channels, res_channels,
                                   res_dilations, up_channels, first_last_kernel, inner_kernel, base_width_scale, norm)

enum class LayerKind { down, residual_first, residual_second, up, output };

struct GeneratorLayer {
  std::string name;
  LayerKind kind;
  ConvSpec conv;
};

/// Convolution layers in forward order. Parameter shapes are a pure
/// function of this list.
inline std::vector<GeneratorLayer> generator_layers(const GeneratorConfig& cfg) {
  cfg.validate();
  std::vector<GeneratorLayer> layers;
  int in = cfg.input_depth;
  for (int i = 0; i < 4; ++i) {
    const int out = cfg.width(cfg.down_channels[i]);
    const int k = i == 0 ? cfg.first_last_kernel : cfg.inner_kernel;
    layers.push_back({"down" + std::to_string(i), LayerKind::down, {in, out, k, 2, 1}});
    in = out;
  }
  const int res = cfg.width(cfg.res_channels);
  for (int b = 0; b < 9; ++b) {
    const int d = cfg.res_dilations[b];
    layers.push_back({"res" + std::to_string(b) + ".conv1", LayerKind::residual_first, {res, res, cfg.inner_kernel, 1, d}});
    layers.push_back({"res" + std::to_string(b) + ".conv2", LayerKind::residual_second, {res, res, cfg.inner_kernel, 1, d}});
  }
  in = res;
  for (int i = 0; i < 4; ++i) {
    const int out = cfg.width(cfg.up_channels[i]);
    layers.push_back({"up" + std::to_string(i), LayerKind::up, {in, out, cfg.inner_kernel, 1, 1}});
    in = out;
  }
  layers.push_back({"out", LayerKind::output, {in, cfg.output_depth, cfg.first_last_kernel, 1, 1}});
  return layers;
}

/// Learnable weights plus (batch-norm only) running statistics.
///
/// Running statistics are the only state touched by a forward pass, and
/// only in training mode, which the training loop runs exclusively.
struct GeneratorParams {
  GeneratorConfig config;
  ParamSet weights;
  mutable std::map<std::string, Tensor> norm_stats;

  friend bool operator==(const GeneratorParams& a, const GeneratorParams& b) {
    return a.config == b.config && a.weights == b.weights && a.norm_stats == b.norm_stats;
  }
};

inline constexpr double kInitStd = 0.02;

template <class Rng>
GeneratorParams build_generator(const GeneratorConfig& config, Rng& rng) {
  GeneratorParams p{config, {}, {}};
  for (const auto& layer : generator_layers(config)) {
    add_conv(p.weights, layer.name, layer.conv, kInitStd, rng);
    if (config.norm == NormKind::batch && layer.kind != LayerKind::output) {
      p.norm_stats[layer.name + ".running_mean"] = Tensor({layer.conv.out}, 0.0);
      p.norm_stats[layer.name + ".running_var"] = Tensor({layer.conv.out}, 1.0);
    }
  }
  return p;
}

inline GeneratorParams build_generator(const GeneratorConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return build_generator(config, rng);
}

namespace detail {
inline ag::Var normalize(const GeneratorParams& g, const std::string& layer, const ag::Var& x, bool training) {
  if (g.config.norm == NormKind::instance) return ag::instance_norm(x);
  return ag::batch_norm(x, g.norm_stats.at(layer + ".running_mean"), g.norm_stats.at(layer + ".running_var"),
                        training);
}
}  // namespace detail

/// x + F(x), F = conv -> norm -> ReLU -> conv -> norm, both convs dilated.
inline ag::Var residual_block(const GeneratorParams& g, int block, const ag::Var& features, int dilation,
                              bool training = false) {
  const std::string prefix = "res" + std::to_string(block);
  ag::Var h = apply_conv(g.weights, prefix + ".conv1", features, 1, dilation, ag::PadMode::reflect);
  h = ag::relu(detail::normalize(g, prefix + ".conv1", h, training));
  h = apply_conv(g.weights, prefix + ".conv2", h, 1, dilation, ag::PadMode::reflect);
  h = detail::normalize(g, prefix + ".conv2", h, training);
  return ag::add(features, h);
}

inline ag::Var generator_forward(const GeneratorParams& g, const ag::Var& input, bool training = false) {
  const Tensor& x = input.value();
  if (x.rank() != 4 || x.c() != g.config.input_depth) {
    throw std::invalid_argument("generator input " + shape_str(x.shape()) + " does not have depth " +
                                std::to_string(g.config.input_depth));
  }
  if (x.h() % 16 != 0 || x.w() % 16 != 0 || x.h() == 0 || x.w() == 0) {
    throw std::invalid_argument("generator input " + shape_str(x.shape()) + " is not divisible by 16");
  }
  ag::Var h = input;
  for (int i = 0; i < 4; ++i) {
    const std::string name = "down" + std::to_string(i);
    h = apply_conv(g.weights, name, h, 2, 1, ag::PadMode::reflect);
    h = ag::relu(detail::normalize(g, name, h, training));
  }
  for (int b = 0; b < 9; ++b) h = residual_block(g, b, h, g.config.res_dilations[b], training);
  for (int i = 0; i < 4; ++i) {
    const std::string name = "up" + std::to_string(i);
    h = apply_conv(g.weights, name, ag::upsample_nearest2x(h), 1, 1, ag::PadMode::reflect);
    h = ag::relu(detail::normalize(g, name, h, training));
  }
  h = apply_conv(g.weights, "out", h, 1, 1, ag::PadMode::reflect);
  return g.config.head == Head::softmax ? ag::softmax_channels(h) : ag::tanh(h);
}

/// Label completion over the full frame. s0: N x C one-hot with zeroed hole,
/// i0: N x 3 masked image, mask: N x 1.
inline ag::Var sp_forward(const GeneratorParams& g, const ag::Var& s0, const ag::Var& i0, const Tensor& mask,
                          bool training = false) {
  const int depth = s0.value().c() + i0.value().c() + 1;
  if (depth != g.config.input_depth || g.config.head != Head::softmax) {
    throw std::invalid_argument("label-completion params expect input depth " + std::to_string(g.config.input_depth) +
                                ", got " + std::to_string(depth));
  }
  return generator_forward(g, ag::concat_channels({s0, i0, ag::constant(mask)}), training);
}

/// Image synthesis from the masked image and a (hard or soft) label map.
inline ag::Var sg_forward(const GeneratorParams& g, const ag::Var& i0, const ag::Var& labels, const Tensor& mask,
                          bool training = false) {
  const int depth = i0.value().c() + labels.value().c() + 1;
  if (depth != g.config.input_depth || g.config.head != Head::tanh) {
    throw std::invalid_argument("image-synthesis params expect input depth " + std::to_string(g.config.input_depth) +
                                ", got " + std::to_string(depth));
  }
  return generator_forward(g, ag::concat_channels({i0, labels, ag::constant(mask)}), training);
}

/// Inference-only convenience over domain types; returns N x C probabilities.
inline Tensor sp_forward(const GeneratorParams& g, const OneHotLabels& s0, const Image& i0, const HoleMask& mask) {
  ag::NoGradGuard guard;
  return sp_forward(g, ag::constant(s0.to_batch()), ag::constant(i0.to_batch()), mask.to_tensor()).value();
}

inline Image sg_forward(const GeneratorParams& g, const Image& i0, const Tensor& labels_nchw, const HoleMask& mask) {
  ag::NoGradGuard guard;
  return Image::from_batch(sg_forward(g, ag::constant(i0.to_batch()), ag::constant(labels_nchw), mask.to_tensor()).value());
}

}  // namespace seginpaint

#endif  // SEGINPAINT_GENERATOR_HPP
