#pragma once

// Shared framing for the on-disk formats: ASCII magic, 8-byte little-endian
// header length, JSON header, raw little-endian payload.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "actsparse/error.hpp"

namespace actsparse::io {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "payload encoding assumes a little-endian host");

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

/// Writes to a sibling temp file, then renames over the destination.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    require(static_cast<bool>(out), ErrorCode::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  require(!ec, ErrorCode::Io, "rename to " + path.string() + " failed: " + ec.message());
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

inline void put_u64_le(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_u64_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void put_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
  out.insert(out.end(), p, p + values.size_bytes());
}

inline std::vector<float> get_floats(std::span<const std::uint8_t> bytes) {
  std::vector<float> v(bytes.size() / sizeof(float));
  std::memcpy(v.data(), bytes.data(), v.size() * sizeof(float));
  return v;
}

/// Assembles magic + header length + header JSON + payload.
inline std::vector<std::uint8_t> frame(std::string_view magic, const json& header,
                                       std::span<const std::uint8_t> payload) {
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(magic.size() + 8 + text.size() + payload.size());
  out.insert(out.end(), magic.begin(), magic.end());
  put_u64_le(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

struct Framed {
  json header;
  std::span<const std::uint8_t> payload;
};

/// Splits a framed file. Checks magic, header bounds and format_version.
inline Framed unframe(std::span<const std::uint8_t> bytes, std::string_view magic, int expected_version,
                      bool versioned = true) {
  require(bytes.size() >= magic.size() && std::memcmp(bytes.data(), magic.data(), magic.size()) == 0,
          ErrorCode::BadMagic, "expected magic " + std::string(magic.substr(0, magic.size() - 1)));
  require(bytes.size() >= magic.size() + 8, ErrorCode::Truncated, "missing header length");
  const std::uint64_t hlen = get_u64_le(bytes.data() + magic.size());
  const std::size_t hstart = magic.size() + 8;
  require(hlen <= bytes.size() - hstart, ErrorCode::Truncated, "header extends past end of file");
  Framed f;
  try {
    f.header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(hstart),
                           bytes.begin() + static_cast<std::ptrdiff_t>(hstart + hlen));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IndexInconsistent, std::string("header is not valid JSON: ") + e.what());
  }
  require(f.header.is_object(), ErrorCode::IndexInconsistent, "header is not a JSON object");
  if (versioned) {
    require(f.header.contains("format_version") && f.header["format_version"].is_number_integer(),
            ErrorCode::IndexInconsistent, "header lacks format_version");
    const int v = f.header["format_version"].get<int>();
    require(v == expected_version, ErrorCode::VersionMismatch,
            "format_version " + std::to_string(v) + ", expected " + std::to_string(expected_version));
  }
  f.payload = bytes.subspan(hstart + hlen);
  return f;
}

/// Reads a required JSON field, converting type errors into index errors.
template <typename T>
T field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IndexInconsistent, std::string("header field '") + key + "': " + e.what());
  }
}

}  // namespace actsparse::io
