#pragma once

#include <functional>
#include <string_view>
#include <vector>

#include "actsparse/binary_io.hpp"
#include "actsparse/error.hpp"

namespace actsparse::testkit {

/// Re-frames `bytes` after letting `edit` change the header and payload.
inline std::vector<std::uint8_t> reframe(const std::vector<std::uint8_t>& bytes, std::string_view magic,
                                         const std::function<void(nlohmann::json&, std::vector<std::uint8_t>&)>& edit) {
  const auto f = io::unframe(bytes, magic, 0, false);
  nlohmann::json header = f.header;
  std::vector<std::uint8_t> payload(f.payload.begin(), f.payload.end());
  edit(header, payload);
  return io::frame(magic, header, payload);
}

inline ErrorCode error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::logic_error("expected an actsparse::Error");
}

}  // namespace actsparse::testkit
