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

// HTTP service for interactive label editing.
//
//   POST /sessions                 multipart: image, mask[, segmentation]
//   GET  /sessions/{id}/labels     current label ids (PNG)
//   PUT  /sessions/{id}/labels     edited label ids (PNG body)
//   POST /sessions/{id}/render     synthesize from the current labels
//   GET  /sessions/{id}/history    past renders, oldest first
//   GET  /healthz
//
// Rasters travel as PNG (base64 inside JSON bodies). Label PNGs are
// single-channel 8-bit ids; in the initial-label image the hole carries
// kHoleLabel.

#ifndef SEGINPAINT_SERVICE_HPP
#define SEGINPAINT_SERVICE_HPP

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <openssl/evp.h>
#include <openssl/rand.h>

#include <json.hpp>
#include <opencv2/imgproc.hpp>

#include "seginpaint/checkpoint.hpp"
#include "seginpaint/config.hpp"
#include "seginpaint/errors.hpp"
#include "seginpaint/image_io.hpp"
#include "seginpaint/pipeline.hpp"

// Last: httplib pulls in <resolv.h>, whose _res macro collides with a
// parameter name inside Eigen's product kernels.
#include <httplib.h>

namespace seginpaint::service {

inline constexpr int kHoleLabel = 255;
inline constexpr int kThumbnailSize = 128;

class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string base64(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

inline std::vector<std::uint8_t> as_bytes(const std::string& s) { return {s.begin(), s.end()}; }

struct HistoryEntry {
  int index = 0;
  std::vector<std::uint8_t> labels_png;
  std::vector<std::uint8_t> image_png;
  std::vector<std::uint8_t> thumbnail_png;
};

struct Session {
  std::string id;
  Image image;
  HoleMask mask;
  LabelMap initial_labels;   // segmenter output
  LabelMap proposed_labels;  // label-completion result
  LabelMap current_labels;
  std::optional<std::vector<std::uint8_t>> submitted_png;  // last accepted PUT body, verbatim
  std::deque<HistoryEntry> history;
  int next_index = 0;
  std::chrono::steady_clock::time_point expires_at;
  std::mutex mutex;
};

struct CreateResult {
  std::string id;
  LabelMap initial_labels;
  LabelMap proposed_labels;
};

struct RenderResult {
  int index = 0;
  std::vector<std::uint8_t> image_png;
  std::vector<std::uint8_t> thumbnail_png;
};

/// Session store and the operations behind each endpoint. The model is
/// immutable after construction; each session is serialized by its own
/// mutex, so distinct sessions render in parallel.
class InpaintService {
 public:
  using Clock = std::function<std::chrono::steady_clock::time_point()>;

  InpaintService(InpaintModel model, ServeConfig config, std::shared_ptr<const Segmenter> segmenter = nullptr,
                 Clock clock = [] { return std::chrono::steady_clock::now(); })
      : model_(std::move(model)),
        config_(std::move(config)),
        segmenter_(std::move(segmenter)),
        clock_(std::move(clock)),
        palette_(io::make_palette(model_.class_names)),
        digest_(model_.digest()) {
    model_.validate();
  }

  const std::string& model_digest() const { return digest_; }
  const std::vector<io::PaletteEntry>& palette() const { return palette_; }
  const ServeConfig& config() const { return config_; }
  int classes() const { return model_.classes(); }

  CreateResult create_session(std::span<const std::uint8_t> image_png, std::span<const std::uint8_t> mask_png,
                              std::optional<std::span<const std::uint8_t>> segmentation_png = std::nullopt) {
    const Image image = io::decode_image(image_png);
    const HoleMask mask = io::decode_mask(mask_png);
    if (mask.height() != image.height() || mask.width() != image.width()) {
      throw ValidationError("mask is " + std::to_string(mask.width()) + "x" + std::to_string(mask.height()) +
                            ", image is " + std::to_string(image.width()) + "x" + std::to_string(image.height()));
    }
    if (mask.count() != 0 && !mask.is_single_rectangle()) {
      throw ValidationError("mask must be empty or a single filled axis-aligned rectangle");
    }
    std::shared_ptr<const Segmenter> seg = segmenter_;
    if (segmentation_png) {
      seg = std::make_shared<GroundTruthSegmenter>(io::decode_labels(*segmentation_png));
    } else if (!seg) {
      throw ValidationError("no segmentation uploaded and no segmenter configured");
    }
    const InpaintResult r = propose_labels(image, mask, *seg, model_);

    auto s = std::make_shared<Session>();
    s->id = new_id();
    s->image = image;
    s->mask = mask;
    s->initial_labels = r.initial_labels;
    s->proposed_labels = r.proposed_labels;
    s->current_labels = r.proposed_labels;
    s->expires_at = clock_() + std::chrono::seconds(config_.session_ttl_seconds);
    {
      std::lock_guard lock(mutex_);
      sweep_locked();
      sessions_[s->id] = s;
    }
    return {s->id, r.initial_labels, r.proposed_labels};
  }

  /// Replaces the current labels. Pixels outside the hole must equal the
  /// segmenter output; inside, every id must be a valid class.
  void update_labels(const std::string& id, std::span<const std::uint8_t> labels_png) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    const LabelMap edits = io::decode_labels(labels_png);
    if (edits.height() != s->mask.height() || edits.width() != s->mask.width()) {
      throw ValidationError("label map size differs from the session image");
    }
    std::size_t outside = 0, invalid = 0;
    for (std::size_t i = 0; i < edits.ids().size(); ++i) {
      if (!s->mask.bits()[i]) {
        outside += edits.ids()[i] != s->initial_labels.ids()[i];
      } else {
        invalid += edits.ids()[i] >= model_.classes();
      }
    }
    if (outside) {
      throw ValidationError(std::to_string(outside) + " edited pixels lie outside the hole");
    }
    if (invalid) {
      throw ValidationError(std::to_string(invalid) + " pixels carry label ids >= " + std::to_string(model_.classes()));
    }
    s->current_labels = composite(edits, s->initial_labels, s->mask);
    s->submitted_png = std::vector<std::uint8_t>(labels_png.begin(), labels_png.end());
  }

  /// Current labels as PNG; after a PUT this is the submitted body itself.
  std::vector<std::uint8_t> labels_png(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return s->submitted_png ? *s->submitted_png : io::encode_labels_png(s->current_labels);
  }

  RenderResult render(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    const Image out = synthesize(s->image, s->mask, s->current_labels, model_);
    HistoryEntry e;
    e.index = s->next_index++;
    e.labels_png = io::encode_labels_png(s->current_labels);
    e.image_png = io::encode_image_png(out);
    e.thumbnail_png = thumbnail(out);
    s->history.push_back(e);
    while (s->history.size() > static_cast<std::size_t>(config_.history_limit)) s->history.pop_front();
    return {e.index, e.image_png, e.thumbnail_png};
  }

  std::vector<HistoryEntry> history(const std::string& id) {
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    return {s->history.begin(), s->history.end()};
  }

  std::size_t session_count() {
    std::lock_guard lock(mutex_);
    sweep_locked();
    return sessions_.size();
  }

  /// Installs every route on `server`.
  void mount(httplib::Server& server);

 private:
  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(mutex_);
    sweep_locked();
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("no live session " + id);
    it->second->expires_at = clock_() + std::chrono::seconds(config_.session_ttl_seconds);
    return it->second;
  }

  void sweep_locked() {
    const auto now = clock_();
    std::erase_if(sessions_, [&](const auto& kv) { return kv.second->expires_at <= now; });
  }

  static std::string new_id() {
    std::array<std::uint8_t, 16> raw{};
    if (RAND_bytes(raw.data(), static_cast<int>(raw.size())) != 1) throw std::runtime_error("RAND_bytes failed");
    return to_hex(raw);
  }

  static std::vector<std::uint8_t> thumbnail(const Image& img) {
    cv::Mat m = io::image_to_mat(img);
    const double f = static_cast<double>(kThumbnailSize) / std::max(img.height(), img.width());
    if (f < 1.0) {
      cv::Mat small;
      cv::resize(m, small, cv::Size(), f, f, cv::INTER_AREA);
      m = small;
    }
    return io::encode_png(m);
  }

  InpaintModel model_;
  ServeConfig config_;
  std::shared_ptr<const Segmenter> segmenter_;
  Clock clock_;
  std::vector<io::PaletteEntry> palette_;
  std::string digest_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

inline nlohmann::json palette_json(const std::vector<io::PaletteEntry>& palette) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& p : palette) out.push_back({{"id", p.id}, {"name", p.name}, {"rgb", p.rgb}});
  return out;
}

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& msg) {
  send_json(res, status, {{"error", msg}});
}

// Maps exceptions onto status codes.
template <class F>
void guarded(httplib::Response& res, F&& f) {
  try {
    f();
  } catch (const NotFound& e) {
    send_error(res, 404, e.what());
  } catch (const ValidationError& e) {
    send_error(res, 422, e.what());
  } catch (const std::invalid_argument& e) {
    send_error(res, 400, e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, e.what());
  }
}

inline std::optional<std::vector<std::uint8_t>> form_file(const httplib::Request& req, const std::string& name) {
  if (!req.has_file(name)) return std::nullopt;
  return as_bytes(req.get_file_value(name).content);
}

}  // namespace detail

inline void InpaintService::mount(httplib::Server& server) {
  server.set_payload_max_length(config_.max_payload_bytes);

  server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    detail::send_json(res, 200, {{"ok", true}, {"model_digest", digest_}, {"classes", model_.classes()}});
  });

  server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      if (!req.is_multipart_form_data()) throw std::invalid_argument("expected multipart/form-data");
      const auto image = detail::form_file(req, "image");
      const auto mask = detail::form_file(req, "mask");
      if (!image || !mask) throw std::invalid_argument("multipart fields 'image' and 'mask' are required");
      const auto seg = detail::form_file(req, "segmentation");
      const CreateResult r = seg ? create_session(*image, *mask, std::span<const std::uint8_t>(*seg))
                                 : create_session(*image, *mask);
      LabelMap shown = r.initial_labels;
      auto s = find(r.id);
      for (std::size_t i = 0; i < shown.ids().size(); ++i)
        if (s->mask.bits()[i]) shown.ids()[i] = kHoleLabel;
      const Rect hole = s->mask.bounding_rect();
      detail::send_json(
          res, 201,
          {{"id", r.id},
           {"width", s->image.width()},
           {"height", s->image.height()},
           {"hole", hole.empty() ? nlohmann::json(nullptr)
                                 : nlohmann::json{{"x", hole.x}, {"y", hole.y}, {"width", hole.width}, {"height", hole.height}}},
           {"hole_label", kHoleLabel},
           {"labels_png", base64(io::encode_labels_png(shown))},
           {"labels_palette_png", base64(io::encode_png(io::colorize(shown, palette_)))},
           {"sp_labels_png", base64(io::encode_labels_png(r.proposed_labels))},
           {"palette", palette_json(palette_)}});
    });
  });

  server.Get(R"(/sessions/([0-9a-f]+)/labels)", [this](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      const auto png = labels_png(req.matches[1]);
      res.status = 200;
      res.set_content(std::string(png.begin(), png.end()), "image/png");
    });
  });

  server.Put(R"(/sessions/([0-9a-f]+)/labels)", [this](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      update_labels(req.matches[1], as_bytes(req.body));
      detail::send_json(res, 200, {{"ok", true}});
    });
  });

  server.Post(R"(/sessions/([0-9a-f]+)/render)", [this](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      const RenderResult r = render(req.matches[1]);
      detail::send_json(res, 200,
                        {{"index", r.index}, {"image_png", base64(r.image_png)}, {"thumbnail_png", base64(r.thumbnail_png)}});
    });
  });

  server.Get(R"(/sessions/([0-9a-f]+)/history)", [this](const httplib::Request& req, httplib::Response& res) {
    detail::guarded(res, [&] {
      nlohmann::json list = nlohmann::json::array();
      for (const auto& e : history(req.matches[1])) {
        list.push_back({{"index", e.index},
                        {"labels_png", base64(e.labels_png)},
                        {"image_png", base64(e.image_png)},
                        {"thumbnail_png", base64(e.thumbnail_png)}});
      }
      detail::send_json(res, 200, list);
    });
  });

  // Any other session path: unknown id format or route.
  server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.status == 413) {
      detail::send_error(res, 413, "payload too large");
    } else if (res.body.empty()) {
      detail::send_error(res, res.status, "not found");
    }
  });
}

}  // namespace seginpaint::service

#endif  // SEGINPAINT_SERVICE_HPP
