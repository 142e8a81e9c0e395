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

// Run configuration: an INI-style file ("[section]" headers, "key = value"
// lines) plus "key=value" overrides. Keys are addressed as section.key, or
// by the bare key when it is unique across sections.

#ifndef SEGINPAINT_CONFIG_HPP
#define SEGINPAINT_CONFIG_HPP

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "seginpaint/data.hpp"
#include "seginpaint/errors.hpp"
#include "seginpaint/training.hpp"

namespace seginpaint {

struct ServeConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::size_t max_payload_bytes = std::size_t{16} << 20;
  int session_ttl_seconds = 30 * 60;
  int history_limit = 20;
  std::string segmenter_command;  // empty: the upload must carry a segmentation
};

struct RunConfig {
  TrainConfig train;
  std::filesystem::path data_root;
  std::string categories = "cityscapes";  // or "identity"
  int identity_classes = 8;
  HoleRange holes;
  ServeConfig serve;

  CategoryMapping mapping() const {
    if (categories == "cityscapes") return CategoryMapping::cityscapes();
    if (categories == "identity") return CategoryMapping::identity(identity_classes);
    throw ConfigError("unknown category table '" + categories + "' (expected cityscapes or identity)");
  }

  /// Keeps the class list of the training config in sync with the table.
  void sync_classes() { train.class_names = mapping().target_names; }

  void validate() const {
    train.validate();
    mapping().validate();
    if (!(holes.lo > 0.0 && holes.lo <= holes.hi && holes.hi <= 1.0)) {
      throw ConfigError("hole range must satisfy 0 < hole_min <= hole_max <= 1");
    }
    if (serve.port <= 0 || serve.port > 65535) throw ConfigError("port must lie in 1..65535");
    if (serve.session_ttl_seconds <= 0 || serve.history_limit <= 0 || serve.max_payload_bytes == 0) {
      throw ConfigError("serve limits must be positive");
    }
  }
};

namespace detail {

inline std::string strip(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  s = s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) s = s.substr(1, s.size() - 2);
  return s;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  T v{};
  in >> v;
  if (in.fail() || !(in >> std::ws).eof()) throw ConfigError("'" + key + "' expects a number, got '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + text + "'");
}

template <class E>
E parse_enum(const std::string& key, const std::string& text) {
  const E v = nlohmann::json(text).get<E>();
  // nlohmann maps unknown strings onto the first enumerator; round-trip to detect that
  if (nlohmann::json(v).get<std::string>() != text) throw ConfigError("'" + key + "' has no value '" + text + "'");
  return v;
}

template <class T>
std::string show(const T& v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Binds "section.key" to a member reached through `ref`.
template <class T, class Ref>
Field number_field(const std::string& key, Ref ref) {
  return {[key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_number<T>(key, v); },
          [ref](const RunConfig& c) { return show(ref(const_cast<RunConfig&>(c))); }};
}

template <class E, class Ref>
Field enum_field(const std::string& key, Ref ref) {
  return {[key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_enum<E>(key, v); },
          [ref](const RunConfig& c) { return nlohmann::json(ref(const_cast<RunConfig&>(c))).template get<std::string>(); }};
}

inline const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    // clang-format off
    t["train.stage"] = enum_field<Stage>("train.stage", [](RunConfig& c) -> Stage& { return c.train.stage; });
    t["train.epochs"] = number_field<int>("train.epochs", [](RunConfig& c) -> int& { return c.train.epochs; });
    t["train.decay_start"] = number_field<int>("train.decay_start", [](RunConfig& c) -> int& { return c.train.decay_start; });
    t["train.lr"] = number_field<double>("train.lr", [](RunConfig& c) -> double& { return c.train.lr; });
    t["train.beta1"] = number_field<double>("train.beta1", [](RunConfig& c) -> double& { return c.train.adam.beta1; });
    t["train.beta2"] = number_field<double>("train.beta2", [](RunConfig& c) -> double& { return c.train.adam.beta2; });
    t["train.batch_size"] = number_field<int>("train.batch_size", [](RunConfig& c) -> int& { return c.train.batch_size; });
    t["train.image_size"] = number_field<int>("train.image_size", [](RunConfig& c) -> int& { return c.train.image_size; });
    t["train.width_scale"] = number_field<double>("train.width_scale", [](RunConfig& c) -> double& { return c.train.width_scale; });
    t["train.seed"] = number_field<std::uint64_t>("train.seed", [](RunConfig& c) -> std::uint64_t& { return c.train.seed; });
    t["train.norm"] = enum_field<NormKind>("train.norm", [](RunConfig& c) -> NormKind& { return c.train.norm; });
    t["train.checkpoint_every"] = number_field<int>("train.checkpoint_every", [](RunConfig& c) -> int& { return c.train.checkpoint_every; });
    t["train.max_steps"] = number_field<std::int64_t>("train.max_steps", [](RunConfig& c) -> std::int64_t& { return c.train.max_steps; });
    t["loss.lambda_adv"] = number_field<double>("loss.lambda_adv", [](RunConfig& c) -> double& { return c.train.weights.adversarial; });
    t["loss.lambda_perceptual"] = number_field<double>("loss.lambda_perceptual", [](RunConfig& c) -> double& { return c.train.weights.perceptual; });
    t["loss.lambda_alex"] = number_field<double>("loss.lambda_alex", [](RunConfig& c) -> double& { return c.train.weights.alex; });
    t["model.sg_condition"] = enum_field<SgCondition>("model.sg_condition", [](RunConfig& c) -> SgCondition& { return c.train.sg_condition; });
    t["data.identity_classes"] = number_field<int>("data.identity_classes", [](RunConfig& c) -> int& { return c.identity_classes; });
    t["data.hole_min"] = number_field<double>("data.hole_min", [](RunConfig& c) -> double& { return c.holes.lo; });
    t["data.hole_max"] = number_field<double>("data.hole_max", [](RunConfig& c) -> double& { return c.holes.hi; });
    t["serve.host"] = {[](RunConfig& c, const std::string& v) { c.serve.host = v; },
                       [](const RunConfig& c) { return c.serve.host; }};
    t["serve.port"] = number_field<int>("serve.port", [](RunConfig& c) -> int& { return c.serve.port; });
    t["serve.max_payload_bytes"] = number_field<std::size_t>("serve.max_payload_bytes", [](RunConfig& c) -> std::size_t& { return c.serve.max_payload_bytes; });
    t["serve.session_ttl_seconds"] = number_field<int>("serve.session_ttl_seconds", [](RunConfig& c) -> int& { return c.serve.session_ttl_seconds; });
    t["serve.history_limit"] = number_field<int>("serve.history_limit", [](RunConfig& c) -> int& { return c.serve.history_limit; });
    t["serve.segmenter_command"] = {[](RunConfig& c, const std::string& v) { c.serve.segmenter_command = v; },
                                    [](const RunConfig& c) { return c.serve.segmenter_command; }};
    // clang-format on
    t["loss.train_layer_weights"] = {
        [](RunConfig& c, const std::string& v) { c.train.train_layer_weights = parse_bool("loss.train_layer_weights", v); },
        [](const RunConfig& c) { return std::string(c.train.train_layer_weights ? "true" : "false"); }};
    t["data.root"] = {[](RunConfig& c, const std::string& v) { c.data_root = v; },
                      [](const RunConfig& c) { return c.data_root.string(); }};
    t["data.categories"] = {[](RunConfig& c, const std::string& v) { c.categories = v; },
                            [](const RunConfig& c) { return c.categories; }};
    return t;
  }();
  return table;
}

}  // namespace detail

/// Resolves a bare or qualified key to its "section.key" form.
inline std::string resolve_key(const std::string& key) {
  const auto& f = detail::fields();
  if (key.find('.') != std::string::npos) {
    if (!f.count(key)) throw ConfigError("unknown configuration key '" + key + "'");
    return key;
  }
  std::vector<std::string> hits;
  for (const auto& [full, _] : f)
    if (full.substr(full.find('.') + 1) == key) hits.push_back(full);
  if (hits.empty()) throw ConfigError("unknown configuration key '" + key + "'");
  if (hits.size() > 1) throw ConfigError("ambiguous key '" + key + "'; qualify it with a section");
  return hits.front();
}

inline void set_value(RunConfig& c, const std::string& key, const std::string& value) {
  detail::fields().at(resolve_key(key)).set(c, detail::strip(value));
}

/// Applies "key=value".
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  set_value(c, detail::strip(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

/// Reads an INI file into `c`. Keys outside any section are rejected, as
/// are unknown sections and keys.
inline void load_config_file(RunConfig& c, const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) {
      throw ConfigError("key '" + section + "' must appear inside a [section]");
    }
    for (const auto& [key, value] : body) set_value(c, section + "." + key, value.data());
  }
}

/// File (optional) then overrides, in order; the result is validated.
inline RunConfig resolve_config(const std::optional<std::filesystem::path>& file,
                                const std::vector<std::string>& overrides) {
  RunConfig c;
  if (file) load_config_file(c, *file);
  for (const auto& o : overrides) apply_override(c, o);
  c.sync_classes();
  c.validate();
  return c;
}

/// Every key with its resolved value, grouped by section.
inline std::string to_ini(const RunConfig& c) {
  std::ostringstream os;
  std::string current;
  for (const auto& [full, field] : detail::fields()) {
    const std::string section = full.substr(0, full.find('.'));
    if (section != current) {
      os << (current.empty() ? "" : "\n") << '[' << section << "]\n";
      current = section;
    }
    os << full.substr(full.find('.') + 1) << " = " << field.get(c) << '\n';
  }
  return os.str();
}

}  // namespace seginpaint

#endif  // SEGINPAINT_CONFIG_HPP
