#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "actsparse/binary_io.hpp"
#include "actsparse/model.hpp"

namespace actsparse {

inline constexpr std::string_view kWeightMagic = "ASPW1\n";
inline constexpr int kWeightFormatVersion = 1;

inline std::vector<std::uint8_t> encode_weights(const ModelConfig& c, const WeightSet& w) {
  validate(c, w);
  nlohmann::json header = to_json(c);
  header["format_version"] = kWeightFormatVersion;
  nlohmann::json index = nlohmann::json::array();
  std::vector<std::uint8_t> payload;
  for_each_tensor(w, c.ffn_variant == FfnVariant::SwiGLU, [&](const std::string& name, const Matrix& m) {
    index.push_back({{"name", name},
                     {"shape", {m.rows, m.cols}},
                     {"dtype", "f32"},
                     {"byte_offset", payload.size()},
                     {"byte_len", m.size() * sizeof(float)}});
    io::put_floats(payload, m.data);
  });
  header["tensors"] = std::move(index);
  return io::frame(kWeightMagic, header, payload);
}

inline std::pair<ModelConfig, WeightSet> decode_weights(std::span<const std::uint8_t> bytes) {
  const auto f = io::unframe(bytes, kWeightMagic, kWeightFormatVersion);
  ModelConfig c;
  try {
    c = model_config_from_json(f.header);
  } catch (const Error& e) {
    throw Error(ErrorCode::IndexInconsistent, e.what());
  }
  require(f.header.contains("tensors") && f.header["tensors"].is_array(), ErrorCode::IndexInconsistent,
          "header lacks tensor index");
  const auto& index = f.header["tensors"];

  // Shape the weight set from the config, then fill each tensor from the
  // index entry that must sit at the same position.
  WeightSet w;
  w.layers.resize(c.n_layers);
  std::size_t slot = 0;
  std::uint64_t expected_offset = 0;
  for_each_tensor(w, c.ffn_variant == FfnVariant::SwiGLU, [&](const std::string& name, Matrix& m) {
    require(slot < index.size(), ErrorCode::IndexInconsistent, "tensor index is missing " + name);
    const auto& e = index[slot++];
    const auto got_name = io::field<std::string>(e, "name");
    require(got_name == name, ErrorCode::IndexInconsistent, "expected tensor " + name + ", index has " + got_name);
    require(io::field<std::string>(e, "dtype") == "f32", ErrorCode::IndexInconsistent, name + ": dtype must be f32");
    const auto shape = io::field<std::vector<std::size_t>>(e, "shape");
    const auto [er, ec] = expected_shape(c, name);
    require(shape.size() == 2 && shape[0] == er && shape[1] == ec, ErrorCode::IndexInconsistent,
            name + ": shape does not match config");
    const auto offset = io::field<std::uint64_t>(e, "byte_offset");
    const auto len = io::field<std::uint64_t>(e, "byte_len");
    require(len == er * ec * sizeof(float), ErrorCode::IndexInconsistent, name + ": byte_len does not match shape");
    require(offset == expected_offset, ErrorCode::IndexInconsistent, name + ": payloads must be contiguous in index order");
    require(offset <= f.payload.size() && len <= f.payload.size() - offset, ErrorCode::Truncated,
            name + " extends past end of file");
    m = Matrix(er, ec, io::get_floats(f.payload.subspan(offset, len)));
    expected_offset = offset + len;
  });
  require(slot == index.size(), ErrorCode::IndexInconsistent, "tensor index has unexpected extra entries");
  require(expected_offset == f.payload.size(), ErrorCode::IndexInconsistent, "trailing bytes after last tensor");
  for_each_tensor(w, c.ffn_variant == FfnVariant::SwiGLU, [&](const std::string& name, const Matrix& m) {
    require(all_finite(m.data), ErrorCode::IndexInconsistent, name + " holds non-finite values");
  });
  return {c, std::move(w)};
}

inline void save_weights(const std::filesystem::path& path, const ModelConfig& c, const WeightSet& w) {
  io::write_file_atomic(path, encode_weights(c, w));
}

inline std::pair<ModelConfig, WeightSet> load_weights(const std::filesystem::path& path) {
  return decode_weights(io::read_file(path));
}

}  // namespace actsparse
