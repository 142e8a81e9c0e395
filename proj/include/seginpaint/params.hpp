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

#ifndef SEGINPAINT_PARAMS_HPP
#define SEGINPAINT_PARAMS_HPP

#include <cmath>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seginpaint/autograd.hpp"
#include "seginpaint/tensor.hpp"

namespace seginpaint {

/// Ordered, named collection of trainable tensors.
///
/// Copies are deep: the copy owns fresh leaves, so two ParamSets never
/// alias storage or gradients.
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet& other) { copy_from(other); }
  ParamSet& operator=(const ParamSet& other) {
    if (this != &other) copy_from(other);
    return *this;
  }
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  ag::Var& add(const std::string& name, Tensor init, bool trainable = true) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, ag::Var(std::move(init), trainable)});
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const ag::Var& at(const std::string& name) const { return entries_.at(lookup(name)).second; }
  ag::Var& at(const std::string& name) { return entries_.at(lookup(name)).second; }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [_, v] : entries_) n += v.value().size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, v] : entries_) v.zero_grad();
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      if (a.entries_[i].first != b.entries_[i].first) return false;
      if (!(a.entries_[i].second.value() == b.entries_[i].second.value())) return false;
    }
    return true;
  }

 private:
  std::size_t lookup(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter " + name);
    return it->second;
  }
  void copy_from(const ParamSet& other) {
    entries_.clear();
    index_ = other.index_;
    for (const auto& [name, v] : other.entries_) entries_.push_back({name, ag::Var(v.value(), v.requires_grad())});
  }

  std::vector<std::pair<std::string, ag::Var>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct ConvSpec {
  int in = 0;
  int out = 0;
  int kernel = 3;
  int stride = 1;
  int dilation = 1;
};

/// Registers `<name>.weight` (Gaussian, zero mean) and `<name>.bias` (zeros).
template <class Rng>
void add_conv(ParamSet& params, const std::string& name, const ConvSpec& spec, double stddev, Rng& rng) {
  Tensor w({spec.out, spec.in, spec.kernel, spec.kernel});
  std::normal_distribution<double> normal(0.0, stddev);
  for (auto& v : w.values()) v = normal(rng);
  params.add(name + ".weight", std::move(w));
  params.add(name + ".bias", Tensor({spec.out}, 0.0));
}

/// Padded convolution: pad = floor(kernel / 2) * dilation on every side.
inline ag::Var apply_conv(const ParamSet& params, const std::string& name, const ag::Var& x, int stride, int dilation,
                          ag::PadMode mode) {
  const ag::Var& w = params.at(name + ".weight");
  const int pad = (w.value().dim(2) / 2) * dilation;
  ag::Var padded = pad > 0 ? ag::pad2d(x, {pad, pad, pad, pad}, mode) : x;
  return ag::conv2d(padded, w, params.at(name + ".bias"), stride, dilation);
}

inline int scaled_channels(int channels, double scale) {
  return static_cast<int>(std::ceil(channels * scale - 1e-9));
}

}  // namespace seginpaint

#endif  // SEGINPAINT_PARAMS_HPP
