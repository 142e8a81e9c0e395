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

// Adversarial training of the label-completion network (stage "sp"), the
// image-synthesis network (stage "sg") and both end to end ("joint").
//
// Every source of randomness is derived from the configured seed and the
// (epoch, position) counters, so a TrainState holds everything needed to
// continue a run bit for bit.

#ifndef SEGINPAINT_TRAINING_HPP
#define SEGINPAINT_TRAINING_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "seginpaint/autograd.hpp"
#include "seginpaint/checkpoint.hpp"
#include "seginpaint/data.hpp"
#include "seginpaint/discriminator.hpp"
#include "seginpaint/errors.hpp"
#include "seginpaint/generator.hpp"
#include "seginpaint/image_io.hpp"
#include "seginpaint/losses.hpp"
#include "seginpaint/optim.hpp"

namespace seginpaint {

enum class Stage { sp, sg, joint };

/// What the image-synthesis discriminators see next to the candidate image.
enum class SgCondition { image, image_and_labels };

NLOHMANN_JSON_SERIALIZE_ENUM(Stage, {{Stage::sp, "sp"}, {Stage::sg, "sg"}, {Stage::joint, "joint"}})
NLOHMANN_JSON_SERIALIZE_ENUM(SgCondition, {{SgCondition::image, "image"},
                                           {SgCondition::image_and_labels, "image_and_labels"}})

inline std::string to_string(Stage s) { return nlohmann::json(s).get<std::string>(); }

struct TrainConfig {
  Stage stage = Stage::sp;
  int epochs = 200;
  int decay_start = 100;
  double lr = 2e-4;
  AdamOptions adam;
  int batch_size = 1;
  int image_size = 256;
  double width_scale = 1.0;
  std::uint64_t seed = 0;
  LossWeights weights;
  NormKind norm = NormKind::instance;
  SgCondition sg_condition = SgCondition::image_and_labels;
  bool train_layer_weights = false;
  int checkpoint_every = 10;  // epochs; 0 keeps only the final checkpoint
  std::int64_t max_steps = 0;  // 0 = run all epochs
  std::vector<std::string> class_names = CategoryMapping::cityscapes().target_names;

  int classes() const { return static_cast<int>(class_names.size()); }

  void validate() const {
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (decay_start < 0 || decay_start > epochs) throw ConfigError("decay_start must lie in [0, epochs]");
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (image_size < 16 || image_size % 16 != 0) throw ConfigError("image_size must be a positive multiple of 16");
    if (!(width_scale > 0.0)) throw ConfigError("width_scale must be positive");
    if (checkpoint_every < 0 || max_steps < 0) throw ConfigError("checkpoint_every and max_steps must be >= 0");
    if (class_names.empty()) throw ConfigError("at least one class is required");
    weights.validate();
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(TrainConfig, stage, epochs, decay_start, lr, adam, batch_size, image_size,
                                   width_scale, seed, weights, norm, sg_condition, train_layer_weights,
                                   checkpoint_every, max_steps, class_names)

/// Constant rate until `decay_start`, then linear decay reaching 0 at `epochs`.
inline double linear_lr(int epoch, const TrainConfig& config) {
  if (epoch < config.decay_start || config.epochs == config.decay_start) return config.lr;
  return config.lr * static_cast<double>(config.epochs - epoch) /
         static_cast<double>(config.epochs - config.decay_start);
}

// ------------------------------------------------------------------ networks

/// A generator, its three-scale discriminator and their optimizers.
struct GanPair {
  GeneratorParams gen;
  MultiScaleDiscriminatorParams disc;
  Adam gen_opt;
  std::vector<Adam> disc_opt;  // one per scale

  friend bool operator==(const GanPair&, const GanPair&) = default;
};

inline DiscriminatorConfig sp_disc_config(const TrainConfig& c) {
  DiscriminatorConfig d;
  d.input_depth = 2 * c.classes();
  d.width_scale = c.width_scale;
  return d;
}

inline DiscriminatorConfig sg_disc_config(const TrainConfig& c) {
  DiscriminatorConfig d;
  d.input_depth = 3 + (c.sg_condition == SgCondition::image_and_labels ? c.classes() : 0) + 3;
  d.width_scale = c.width_scale;
  return d;
}

inline GeneratorConfig sp_gen_config(const TrainConfig& c) {
  auto g = GeneratorConfig::label_completion(c.classes(), c.width_scale);
  g.norm = c.norm;
  return g;
}

inline GeneratorConfig sg_gen_config(const TrainConfig& c) {
  auto g = GeneratorConfig::image_synthesis(c.classes(), c.width_scale);
  g.norm = c.norm;
  return g;
}

struct TrainState {
  TrainConfig config;
  std::uint64_t epoch = 0;
  std::uint64_t position = 0;  // samples consumed in the current epoch
  std::uint64_t step = 0;
  std::optional<GanPair> sp;
  std::optional<GanPair> sg;
  std::optional<PerceptualNet> pnet;
  Adam pnet_opt;

  bool finished() const {
    return epoch >= static_cast<std::uint64_t>(config.epochs) ||
           (config.max_steps > 0 && step >= static_cast<std::uint64_t>(config.max_steps));
  }

  friend bool operator==(const TrainState&, const TrainState&) = default;
};

inline bool stage_uses_sp(Stage s) { return s != Stage::sg; }
inline bool stage_uses_sg(Stage s) { return s != Stage::sp; }

/// Fresh networks for the configured stage, initialized from the seed.
inline TrainState make_train_state(const TrainConfig& config) {
  config.validate();
  TrainState st;
  st.config = config;
  auto pair = [&](GeneratorConfig g, DiscriminatorConfig d, std::uint64_t salt) {
    return GanPair{build_generator(g, mix_seed(config.seed, salt)),
                   build_discriminators(d, mix_seed(config.seed, salt + 1)), Adam(config.adam),
                   std::vector<Adam>(static_cast<std::size_t>(d.scales), Adam(config.adam))};
  };
  if (stage_uses_sp(config.stage)) st.sp = pair(sp_gen_config(config), sp_disc_config(config), 1);
  if (stage_uses_sg(config.stage)) {
    st.sg = pair(sg_gen_config(config), sg_disc_config(config), 3);
    PerceptualNetConfig pc;
    pc.train_layer_weights = config.train_layer_weights;
    st.pnet = build_perceptual_net(pc, mix_seed(config.seed, 5));
  }
  st.pnet_opt = Adam(config.adam);
  return st;
}

// ------------------------------------------------------------------ batches

struct Batch {
  std::vector<std::string> names;
  Tensor image;         // N x 3 x H x W ground truth
  Tensor masked_image;  // N x 3 x H x W
  Tensor known_labels;  // N x C x H x W, zero in the hole
  Tensor labels;        // N x C x H x W ground-truth one-hot
  Tensor mask;          // N x 1 x H x W
};

inline Tensor stack(const std::vector<Tensor>& items) {
  const Tensor& first = items.front();
  Shape shape{static_cast<int>(items.size())};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  Tensor out(shape);
  double* dst = out.data();
  for (const auto& t : items) {
    t.require_same_shape(first, "stack");
    dst = std::copy(t.values().begin(), t.values().end(), dst);
  }
  return out;
}

inline Batch make_batch(const std::vector<Sample>& samples, int classes) {
  if (samples.empty()) throw std::invalid_argument("make_batch: no samples");
  std::vector<Tensor> img, masked, known, gt, mask;
  Batch b;
  for (const auto& s : samples) {
    b.names.push_back(s.name);
    img.push_back(s.image.tensor());
    masked.push_back(s.masked_image.tensor());
    known.push_back(s.masked_labels.tensor());
    gt.push_back(one_hot(s.labels, classes).tensor());
    const Tensor m = s.mask.to_tensor();
    mask.push_back(m.reshaped({1, m.h(), m.w()}));
  }
  b.image = stack(img);
  b.masked_image = stack(masked);
  b.known_labels = stack(known);
  b.labels = stack(gt);
  b.mask = stack(mask);
  return b;
}

// ------------------------------------------------------------------ steps

using LossFields = std::vector<std::pair<std::string, double>>;

struct StepResult {
  LossFields fields;
  ag::Var generator_total;
};

namespace detail {

inline void zero_grads(MultiScaleDiscriminatorParams& d) {
  for (auto& s : d.scales) s.zero_grad();
}

inline void disc_update(MultiScaleDiscriminatorParams& disc, std::vector<Adam>& opt, const ag::Var& condition,
                        const ag::Var& real, const ag::Var& fake, double lr, double& loss_out) {
  zero_grads(disc);
  const auto r = multiscale_forward(disc, condition, real);
  const auto f = multiscale_forward(disc, condition, ag::detach(fake));
  const ag::Var loss = adversarial_loss_d(patch_maps(r), patch_maps(f));
  loss_out = loss.value().item();
  if (!std::isfinite(loss_out)) return;
  ag::backward(loss);
  for (std::size_t k = 0; k < disc.scales.size(); ++k) opt[k].step(disc.scales[k], lr);
  zero_grads(disc);
}

// Generator-side adversarial and feature-matching terms against `disc`.
inline std::pair<ag::Var, ag::Var> generator_terms(const MultiScaleDiscriminatorParams& disc,
                                                   const ag::Var& condition, const ag::Var& real,
                                                   const ag::Var& fake, const Tensor& mask) {
  std::vector<DiscriminatorOutput> r;
  {
    ag::NoGradGuard guard;
    r = multiscale_forward(disc, ag::detach(condition), real);
  }
  const auto f = multiscale_forward(disc, condition, fake);
  return {adversarial_loss_g(patch_maps(f)), masked_feature_matching_loss(feature_pyramids(r), feature_pyramids(f), mask)};
}

inline void append(LossFields& out, const std::string& prefix, const LossReport& r, bool with_patch) {
  out.emplace_back(prefix + "adversarial", r.adversarial);
  out.emplace_back(prefix + "feature_matching", r.feature_matching);
  if (with_patch) out.emplace_back(prefix + "perceptual_patch", r.perceptual_patch);
  out.emplace_back(prefix + "total", r.total);
}

}  // namespace detail

/// Label-completion candidate shown to the discriminator: the soft
/// prediction inside the hole, the known one-hot labels elsewhere.
inline ag::Var sp_candidate(const GanPair& net, const Batch& b) {
  const ag::Var known = ag::constant(b.known_labels);
  const ag::Var probs = sp_forward(net.gen, known, ag::constant(b.masked_image), b.mask, true);
  return ag::composite(probs, known, b.mask);
}

/// Generator objective of the label-completion pair for a given candidate.
inline Objective sp_generator_objective(const GanPair& net, const Batch& b, const ag::Var& candidate,
                                        const LossWeights& w) {
  auto [adv, fm] = detail::generator_terms(net.disc, ag::constant(b.known_labels), ag::constant(b.labels), candidate,
                                           b.mask);
  return sp_objective(adv, fm, w);
}

inline ag::Var sg_condition(const TrainConfig& cfg, const Batch& b, const ag::Var& labels) {
  const ag::Var masked = ag::constant(b.masked_image);
  return cfg.sg_condition == SgCondition::image ? masked : ag::concat_channels({masked, ag::detach(labels)});
}

/// Synthesized image composited over the known pixels.
inline ag::Var sg_candidate(const GanPair& net, const Batch& b, const ag::Var& labels) {
  const ag::Var masked = ag::constant(b.masked_image);
  return ag::composite(sg_forward(net.gen, masked, labels, b.mask, true), masked, b.mask);
}

inline Objective sg_generator_objective(const GanPair& net, const PerceptualNet& pnet, const Batch& b,
                                        const ag::Var& condition, const ag::Var& candidate, const LossWeights& w) {
  const ag::Var real = ag::constant(b.image);
  auto [adv, fm] = detail::generator_terms(net.disc, condition, real, candidate, b.mask);
  return sg_objective(adv, fm, perceptual_patch_loss(candidate, real, b.mask, pnet), w);
}

/// One discriminator update followed by one generator update (gradients of
/// the generator objective are left in the generator leaves, optimizer not
/// yet applied). Returns the logged fields in a fixed order.
inline StepResult forward_step(TrainState& st, const Batch& b, double lr) {
  const TrainConfig& cfg = st.config;
  StepResult out;

  ag::Var sp_labels;  // completed label map fed to SG in the joint stage
  std::optional<Objective> sp_obj, sg_obj;
  double d_sp = 0.0, d_sg = 0.0;

  if (cfg.stage != Stage::sg) {
    GanPair& net = *st.sp;
    sp_labels = sp_candidate(net, b);
    detail::disc_update(net.disc, net.disc_opt, ag::constant(b.known_labels), ag::constant(b.labels), sp_labels, lr,
                        d_sp);
    sp_obj = sp_generator_objective(net, b, sp_labels, cfg.weights);
  }
  if (cfg.stage != Stage::sp) {
    GanPair& net = *st.sg;
    const ag::Var labels = cfg.stage == Stage::sg ? ag::constant(b.labels) : sp_labels;
    const ag::Var completed = sg_candidate(net, b, labels);
    const ag::Var cond = sg_condition(cfg, b, labels);
    detail::disc_update(net.disc, net.disc_opt, cond, ag::constant(b.image), completed, lr, d_sg);
    sg_obj = sg_generator_objective(net, *st.pnet, b, cond, completed, cfg.weights);
  }

  switch (cfg.stage) {
    case Stage::sp:
      out.fields.emplace_back("d_loss", d_sp);
      detail::append(out.fields, "", sp_obj->report, false);
      out.generator_total = sp_obj->total;
      break;
    case Stage::sg:
      out.fields.emplace_back("d_loss", d_sg);
      detail::append(out.fields, "", sg_obj->report, true);
      out.generator_total = sg_obj->total;
      break;
    case Stage::joint:
      out.fields.emplace_back("sp.d_loss", d_sp);
      detail::append(out.fields, "sp.", sp_obj->report, false);
      out.fields.emplace_back("sg.d_loss", d_sg);
      detail::append(out.fields, "sg.", sg_obj->report, true);
      out.generator_total = ag::add(sp_obj->total, sg_obj->total);
      out.fields.emplace_back("total", out.generator_total.value().item());
      break;
  }
  return out;
}

/// Applies the accumulated generator gradients and clears every gradient.
inline void generator_update(TrainState& st, double lr) {
  auto apply = [&](std::optional<GanPair>& net, bool trained) {
    if (!net) return;
    if (trained) net->gen_opt.step(net->gen.weights, lr);
    net->gen.weights.zero_grad();
    detail::zero_grads(net->disc);
  };
  apply(st.sp, stage_uses_sp(st.config.stage));
  apply(st.sg, stage_uses_sg(st.config.stage));
  if (st.pnet && st.pnet->config.train_layer_weights && stage_uses_sg(st.config.stage)) {
    st.pnet_opt.step(st.pnet->layer_weights, lr);
    st.pnet->project();
  }
  if (st.pnet) st.pnet->layer_weights.zero_grad();
}

// ------------------------------------------------------------------ checkpoints

namespace detail {

inline void store_params(Archive& a, const std::string& prefix, const ParamSet& p) {
  for (const auto& [name, v] : p) a.put(prefix + name, v.value());
}

inline void load_params(const Archive& a, const std::string& prefix, ParamSet& p) {
  for (auto& [name, v] : p) {
    const Tensor& t = a.get(prefix + name);
    if (t.shape() != v.value().shape()) {
      throw ValidationError("checkpoint tensor " + prefix + name + " has shape " + shape_str(t.shape()) +
                            ", configuration expects " + shape_str(v.value().shape()));
    }
    v.mutable_value() = t;
  }
}

inline void store_adam(Archive& a, const std::string& prefix, const Adam& opt) {
  a.meta["optimizers"][prefix] = opt.steps();
  for (const auto& [name, m] : opt.moments()) {
    a.put(prefix + "m/" + name, m.first);
    a.put(prefix + "v/" + name, m.second);
  }
}

inline void load_adam(const Archive& a, const std::string& prefix, Adam& opt) {
  std::map<std::string, Adam::Moments> moments;
  const std::string mp = prefix + "m/";
  for (const auto& [name, t] : a.tensors) {
    if (name.rfind(mp, 0) != 0) continue;
    const std::string param = name.substr(mp.size());
    moments[param] = {t, a.get(prefix + "v/" + param)};
  }
  opt.restore(a.meta.at("optimizers").at(prefix).get<std::uint64_t>(), std::move(moments));
}

}  // namespace detail

inline void store_generator(Archive& a, const std::string& ns, const GeneratorParams& g) {
  a.meta["networks"][ns]["generator"] = g.config;
  detail::store_params(a, ns + "/gen/", g.weights);
  for (const auto& [name, t] : g.norm_stats) a.put(ns + "/gen_stats/" + name, t);
}

/// Rebuilds the generator described in the archive and loads its tensors,
/// validating every shape against the stored configuration.
inline GeneratorParams load_generator(const Archive& a, const std::string& ns) {
  const auto& nets = a.meta.contains("networks") ? a.meta.at("networks") : nlohmann::json::object();
  if (!nets.contains(ns)) throw ValidationError("checkpoint has no '" + ns + "' network");
  GeneratorConfig cfg;
  try {
    cfg = nets.at(ns).at("generator").get<GeneratorConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint generator config unreadable: " + std::string(e.what()));
  }
  GeneratorParams g = build_generator(cfg, std::uint64_t{0});
  detail::load_params(a, ns + "/gen/", g.weights);
  for (auto& [name, t] : g.norm_stats) {
    const Tensor& stored = a.get(ns + "/gen_stats/" + name);
    if (stored.shape() != t.shape()) throw ValidationError("checkpoint norm statistics " + name + " malformed");
    t = stored;
  }
  return g;
}

inline void store_pair(Archive& a, const std::string& ns, const GanPair& p) {
  store_generator(a, ns, p.gen);
  a.meta["networks"][ns]["discriminator"] = p.disc.config;
  for (std::size_t k = 0; k < p.disc.scales.size(); ++k) {
    detail::store_params(a, ns + "/disc/d" + std::to_string(k) + "/", p.disc.scales[k]);
  }
  detail::store_adam(a, ns + "/adam_gen/", p.gen_opt);
  for (std::size_t k = 0; k < p.disc_opt.size(); ++k) {
    detail::store_adam(a, ns + "/adam_disc/d" + std::to_string(k) + "/", p.disc_opt[k]);
  }
}

inline MultiScaleDiscriminatorParams load_discriminators(const Archive& a, const std::string& ns) {
  const auto cfg = a.meta.at("networks").at(ns).at("discriminator").get<DiscriminatorConfig>();
  auto d = build_discriminators(cfg, std::uint64_t{0});
  for (std::size_t k = 0; k < d.scales.size(); ++k) {
    detail::load_params(a, ns + "/disc/d" + std::to_string(k) + "/", d.scales[k]);
  }
  return d;
}

inline GanPair load_pair(const Archive& a, const std::string& ns, const AdamOptions& adam, bool with_optimizers) {
  GanPair p{load_generator(a, ns), load_discriminators(a, ns), Adam(adam), {}};
  p.disc_opt.assign(p.disc.scales.size(), Adam(adam));
  if (with_optimizers) {
    detail::load_adam(a, ns + "/adam_gen/", p.gen_opt);
    for (std::size_t k = 0; k < p.disc_opt.size(); ++k) {
      detail::load_adam(a, ns + "/adam_disc/d" + std::to_string(k) + "/", p.disc_opt[k]);
    }
  }
  return p;
}

inline void store_perceptual(Archive& a, const PerceptualNet& net) {
  a.meta["networks"]["pnet"] = net.config;
  detail::store_params(a, "pnet/features/", net.features);
  detail::store_params(a, "pnet/weights/", net.layer_weights);
}

inline PerceptualNet load_perceptual(const Archive& a) {
  PerceptualNet net = build_perceptual_net(a.meta.at("networks").at("pnet").get<PerceptualNetConfig>(), std::uint64_t{0});
  detail::load_params(a, "pnet/features/", net.features);
  detail::load_params(a, "pnet/weights/", net.layer_weights);
  return net;
}

inline Archive to_archive(const TrainState& st) {
  Archive a;
  a.meta["kind"] = "train_state";
  a.meta["config"] = st.config;
  a.meta["counters"] = {{"epoch", st.epoch}, {"position", st.position}, {"step", st.step}};
  // All sampling is a function of the seed and these counters.
  a.meta["rng"] = {{"seed", st.config.seed}, {"scheme", "splitmix(seed, epoch, index)"}};
  a.meta["networks"] = nlohmann::json::object();
  a.meta["optimizers"] = nlohmann::json::object();
  if (st.sp) store_pair(a, "sp", *st.sp);
  if (st.sg) store_pair(a, "sg", *st.sg);
  if (st.pnet) {
    store_perceptual(a, *st.pnet);
    detail::store_adam(a, "pnet/adam/", st.pnet_opt);
  }
  return a;
}

inline TrainState from_archive(const Archive& a) {
  TrainState st;
  try {
    st.config = a.meta.at("config").get<TrainConfig>();
    const auto& c = a.meta.at("counters");
    st.epoch = c.at("epoch").get<std::uint64_t>();
    st.position = c.at("position").get<std::uint64_t>();
    st.step = c.at("step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint is not a training state: " + std::string(e.what()));
  }
  const auto& nets = a.meta.at("networks");
  if (nets.contains("sp")) st.sp = load_pair(a, "sp", st.config.adam, true);
  if (nets.contains("sg")) st.sg = load_pair(a, "sg", st.config.adam, true);
  st.pnet_opt = Adam(st.config.adam);
  if (nets.contains("pnet")) {
    st.pnet = load_perceptual(a);
    detail::load_adam(a, "pnet/adam/", st.pnet_opt);
  }
  return st;
}

inline void save_checkpoint(const TrainState& st, const std::filesystem::path& path) {
  write_archive(path, to_archive(st));
}

inline TrainState load_checkpoint(const std::filesystem::path& path) { return from_archive(read_archive(path)); }

/// Copies the networks found in `a` into `st` (weights only; optimizer
/// moments start fresh). Used to seed the joint stage from earlier stages.
inline void import_networks(TrainState& st, const Archive& a) {
  const auto nets = a.meta.value("networks", nlohmann::json::object());
  auto import_pair = [&](const std::string& ns, std::optional<GanPair>& slot) {
    if (!nets.contains(ns) || !slot) return;
    GanPair p = load_pair(a, ns, st.config.adam, false);
    if (!(p.gen.config == slot->gen.config) || !(p.disc.config == slot->disc.config)) {
      throw ValidationError("network '" + ns + "' in the init checkpoint does not match the configuration");
    }
    slot = std::move(p);
  };
  import_pair("sp", st.sp);
  import_pair("sg", st.sg);
  if (nets.contains("pnet") && st.pnet) st.pnet = load_perceptual(a);
}

// ------------------------------------------------------------------ loop

struct TrainHooks {
  std::ostream* loss_log = nullptr;
  std::optional<std::filesystem::path> checkpoint_dir;
  std::optional<std::filesystem::path> dump_dir;  // NaN diagnostics
  std::function<void(const TrainState&, const LossFields&)> on_step;
};

inline std::string format_log_line(const TrainState& st, double lr, const LossFields& fields) {
  char buf[64];
  std::string line = "step=" + std::to_string(st.step) + " stage=" + to_string(st.config.stage) +
                     " epoch=" + std::to_string(st.epoch);
  std::snprintf(buf, sizeof buf, "%.17g", lr);
  line += std::string(" lr=") + buf;
  for (const auto& [k, v] : fields) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    line += " " + k + "=" + buf;
  }
  return line;
}

/// Visiting order of an epoch: a seeded permutation of the sample indices.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, epoch, 0x5348));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

namespace detail {
inline void dump_batch(const std::filesystem::path& dir, const Batch& b, const TrainState& st, const LossFields& f) {
  std::filesystem::create_directories(dir);
  nlohmann::json info{{"step", st.step}, {"epoch", st.epoch}, {"samples", b.names}};
  for (const auto& [k, v] : f) info["losses"][k] = std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(std::to_string(v));
  std::ofstream(dir / "info.json") << info.dump(2) << '\n';
  for (int n = 0; n < b.image.n(); ++n) {
    const std::string stem = std::to_string(n) + "_" + b.names[n];
    io::write_image(dir / (stem + "_image.png"), Image::from_batch(b.image, n));
    io::write_image(dir / (stem + "_masked.png"), Image::from_batch(b.masked_image, n));
  }
}
}  // namespace detail

/// Runs (or continues) a stage until its epoch budget or `max_steps`.
inline TrainState train_stage(const TrainConfig& config, const SampleSource& data,
                              std::optional<TrainState> resume = std::nullopt, const TrainHooks& hooks = {}) {
  config.validate();
  if (data.size() == 0) throw ValidationError("training dataset is empty");
  if (data.num_classes() != config.classes()) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes()) + " classes, configuration " +
                      std::to_string(config.classes()));
  }
  TrainState st = resume ? std::move(*resume) : make_train_state(config);
  if (resume) {
    // Budget fields may be extended on resume; the rest must match.
    TrainConfig a = st.config, b = config;
    a.epochs = b.epochs;
    a.decay_start = b.decay_start;
    a.max_steps = b.max_steps;
    a.checkpoint_every = b.checkpoint_every;
    if (!(a == b)) throw ConfigError("resume configuration differs from the checkpoint beyond epoch/step budgets");
    st.config = config;
  }
  if ((stage_uses_sp(config.stage) && !st.sp) || (stage_uses_sg(config.stage) && !st.sg)) {
    throw ConfigError("state lacks the networks required by stage " + to_string(config.stage));
  }

  auto checkpoint = [&](const std::string& name) {
    if (hooks.checkpoint_dir) save_checkpoint(st, *hooks.checkpoint_dir / name);
  };

  const std::size_t n = data.size();
  while (!st.finished()) {
    const auto order = epoch_order(n, config.seed, st.epoch);
    const double lr = linear_lr(static_cast<int>(st.epoch), config);
    while (st.position < n && !st.finished()) {
      std::vector<Sample> samples;
      const std::size_t end = std::min<std::size_t>(n, st.position + config.batch_size);
      for (std::size_t p = st.position; p < end; ++p) samples.push_back(data.get(order[p], st.epoch));
      const Batch batch = make_batch(samples, config.classes());

      StepResult r = forward_step(st, batch, lr);
      bool finite = std::isfinite(r.generator_total.value().item());
      for (const auto& [_, v] : r.fields) finite = finite && std::isfinite(v);
      if (!finite) {
        std::string where = "non-finite loss at step " + std::to_string(st.step) + " (samples:";
        for (const auto& s : batch.names) where += " " + s;
        where += ")";
        if (hooks.dump_dir) {
          const auto dir = *hooks.dump_dir / ("nan_step" + std::to_string(st.step));
          detail::dump_batch(dir, batch, st, r.fields);
          where += ", batch dumped to " + dir.string();
        }
        throw NumericError(where);
      }
      ag::backward(r.generator_total);
      generator_update(st, lr);

      const std::string line = format_log_line(st, lr, r.fields);
      if (hooks.loss_log) *hooks.loss_log << line << '\n' << std::flush;
      st.position = end;
      ++st.step;
      if (hooks.on_step) hooks.on_step(st, r.fields);
    }
    if (st.position >= n) {
      ++st.epoch;
      st.position = 0;
      if (config.checkpoint_every > 0 && st.epoch % static_cast<std::uint64_t>(config.checkpoint_every) == 0 &&
          !st.finished()) {
        checkpoint("epoch" + std::to_string(st.epoch) + ".ckpt");
      }
    }
  }
  checkpoint("final.ckpt");
  return st;
}

}  // namespace seginpaint

#endif  // SEGINPAINT_TRAINING_HPP
