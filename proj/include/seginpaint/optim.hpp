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

#ifndef SEGINPAINT_OPTIM_HPP
#define SEGINPAINT_OPTIM_HPP

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include <json.hpp>

#include "seginpaint/params.hpp"

namespace seginpaint {

struct AdamOptions {
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;

  friend bool operator==(const AdamOptions&, const AdamOptions&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(AdamOptions, beta1, beta2, eps)

/// Adam with bias correction. Moments are keyed by parameter name and
/// created lazily on the first update of each parameter.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamOptions options) : options_(options) {}

  /// One update of every trainable parameter that has a gradient.
  /// Gradients are read, not cleared.
  void step(ParamSet& params, double lr) {
    ++steps_;
    const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (auto& [name, var] : params) {
      if (!var.requires_grad()) continue;
      const Tensor& g = var.grad();
      auto [it, fresh] = moments_.try_emplace(name);
      Moments& mo = it->second;
      if (fresh) {
        mo.first = Tensor(g.shape(), 0.0);
        mo.second = Tensor(g.shape(), 0.0);
      }
      Tensor& value = var.mutable_value();
      for (std::size_t i = 0; i < g.size(); ++i) {
        mo.first[i] = options_.beta1 * mo.first[i] + (1.0 - options_.beta1) * g[i];
        mo.second[i] = options_.beta2 * mo.second[i] + (1.0 - options_.beta2) * g[i] * g[i];
        value[i] -= lr * (mo.first[i] / c1) / (std::sqrt(mo.second[i] / c2) + options_.eps);
      }
    }
  }

  using Moments = std::pair<Tensor, Tensor>;  // first, second

  const AdamOptions& options() const { return options_; }
  std::uint64_t steps() const { return steps_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

  /// Restores serialized state.
  void restore(std::uint64_t steps, std::map<std::string, Moments> moments) {
    steps_ = steps;
    moments_ = std::move(moments);
  }

  friend bool operator==(const Adam&, const Adam&) = default;

 private:
  AdamOptions options_;
  std::uint64_t steps_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace seginpaint

#endif  // SEGINPAINT_OPTIM_HPP
