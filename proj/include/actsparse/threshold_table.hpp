#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "actsparse/binary_io.hpp"
#include "actsparse/model.hpp"

namespace actsparse {

/// Per-(layer, component) magnitude cutoffs for one sparsity level alpha.
struct ThresholdTable {
  double alpha = 0.0;
  std::map<HookPoint, float> entries;

  std::optional<float> find(HookPoint hp) const {
    auto it = entries.find(hp);
    if (it == entries.end()) return std::nullopt;
    return it->second;
  }

  std::set<Component> components() const {
    std::set<Component> out;
    for (const auto& [hp, t] : entries) out.insert(hp.component);
    return out;
  }

  bool operator==(const ThresholdTable&) const = default;
};

inline void validate(const ModelConfig& c, const ThresholdTable& t) {
  require(t.alpha >= 0.0 && t.alpha <= 1.0, ErrorCode::InvalidArgument, "alpha outside [0, 1]");
  for (const auto& [hp, thr] : t.entries) {
    validate(c, hp);
    require(is_enforceable(hp.component), ErrorCode::Config,
            std::string(to_string(hp.component)) + " cannot carry a threshold");
    require(thr >= 0.0f, ErrorCode::InvalidArgument, "negative threshold");
  }
}

inline nlohmann::json to_json(const ThresholdTable& t) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [hp, thr] : t.entries)
    entries.push_back({{"layer", hp.layer}, {"component", std::string(to_string(hp.component))},
                       {"threshold", static_cast<double>(thr)}});
  return {{"alpha", t.alpha}, {"entries", entries}};
}

inline ThresholdTable threshold_table_from_json(const nlohmann::json& j) {
  ThresholdTable t;
  try {
    t.alpha = j.at("alpha").get<double>();
    for (const auto& e : j.at("entries")) {
      const HookPoint hp{e.at("layer").get<std::size_t>(), parse_component(e.at("component").get<std::string>())};
      const auto thr = static_cast<float>(e.at("threshold").get<double>());
      require(thr >= 0.0f, ErrorCode::InvalidArgument, "negative threshold");
      require(t.entries.emplace(hp, thr).second, ErrorCode::InvalidArgument, "duplicate threshold entry");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("threshold table: ") + e.what());
  }
  return t;
}

inline void save_thresholds(const std::filesystem::path& path, const ThresholdTable& t) {
  io::write_text_atomic(path, to_json(t).dump(2) + "\n");
}

inline ThresholdTable load_thresholds(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path.string() + ": " + e.what());
  }
  return threshold_table_from_json(j);
}

}  // namespace actsparse
