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

// Versioned tensor container.
//
//   bytes 0..7    "SEGINPNT"
//   u32           format version
//   u64           header length L
//   L bytes       JSON header (free-form metadata + tensor directory)
//   ...           tensor payloads, float64, in directory order
//   32 bytes      SHA-256 of everything above
//
// Integers and doubles are little-endian.

#ifndef SEGINPAINT_CHECKPOINT_HPP
#define SEGINPAINT_CHECKPOINT_HPP

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "seginpaint/errors.hpp"
#include "seginpaint/tensor.hpp"

namespace seginpaint {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr char kCheckpointMagic[8] = {'S', 'E', 'G', 'I', 'N', 'P', 'N', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using Digest = std::array<std::uint8_t, 32>;

inline Digest sha256(std::span<const std::uint8_t> bytes) {
  Digest out{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size()) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  return out;
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  std::ostringstream os;
  for (auto b : bytes) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(b);
  return os.str();
}

/// Metadata plus an ordered list of named tensors.
struct Archive {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  void put(const std::string& name, const Tensor& t) { tensors[name] = t; }
  bool has(const std::string& name) const { return tensors.count(name) != 0; }
  const Tensor& get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ValidationError("checkpoint lacks tensor " + name);
    return it->second;
  }
};

namespace detail {
template <class T>
void append_raw(std::vector<std::uint8_t>& buf, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

template <class T>
T read_raw(std::span<const std::uint8_t> buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw IntegrityError("checkpoint truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}
}  // namespace detail

inline std::vector<std::uint8_t> serialize(const Archive& archive) {
  nlohmann::json header;
  header["meta"] = archive.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : archive.tensors) header["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  const std::string text = header.dump();

  std::vector<std::uint8_t> buf(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::append_raw(buf, kCheckpointVersion);
  detail::append_raw(buf, static_cast<std::uint64_t>(text.size()));
  buf.insert(buf.end(), text.begin(), text.end());
  for (const auto& [_, t] : archive.tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
    buf.insert(buf.end(), p, p + t.size() * sizeof(double));
  }
  const Digest d = sha256(buf);
  buf.insert(buf.end(), d.begin(), d.end());
  return buf;
}

inline Archive deserialize(std::span<const std::uint8_t> buf) {
  if (buf.size() < sizeof(kCheckpointMagic) + 4 + 8 + 32 ||
      std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw IntegrityError("not a seginpaint checkpoint");
  }
  const auto body = buf.first(buf.size() - 32);
  const Digest expected = sha256(body);
  if (std::memcmp(expected.data(), buf.data() + body.size(), 32) != 0) {
    throw IntegrityError("checkpoint digest mismatch (file corrupt or modified)");
  }
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = detail::read_raw<std::uint32_t>(body, pos);
  if (version != kCheckpointVersion) {
    throw ValidationError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto len = detail::read_raw<std::uint64_t>(body, pos);
  if (pos + len > body.size()) throw IntegrityError("checkpoint header truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(body.begin() + static_cast<std::ptrdiff_t>(pos),
                                   body.begin() + static_cast<std::ptrdiff_t>(pos + len));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError(std::string("checkpoint header unreadable: ") + e.what());
  }
  pos += len;
  Archive out;
  out.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    Tensor t(entry.at("shape").get<Shape>());
    const std::size_t bytes = t.size() * sizeof(double);
    if (pos + bytes > body.size()) throw IntegrityError("checkpoint payload truncated");
    std::memcpy(t.data(), body.data() + pos, bytes);
    pos += bytes;
    out.tensors.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  if (pos != body.size()) throw IntegrityError("checkpoint has trailing bytes");
  return out;
}

/// Writes to a sibling temp file, then renames over `path`.
inline void write_archive(const std::filesystem::path& path, const Archive& archive) {
  const auto bytes = serialize(archive);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Archive read_archive(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace seginpaint

#endif  // SEGINPAINT_CHECKPOINT_HPP
