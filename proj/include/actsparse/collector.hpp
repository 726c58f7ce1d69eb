#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "actsparse/binary_io.hpp"
#include "actsparse/forward.hpp"
#include "actsparse/hash.hpp"
#include "actsparse/model.hpp"

namespace actsparse {

inline constexpr std::size_t kDefaultSegmentLen = 256;

/// Activations of one hook point over one segment: [n_tokens x dim].
struct ActivationRecord {
  std::size_t segment_id = 0;
  std::size_t layer = 0;
  Component component = Component::FFNHidden;
  Matrix values;

  bool operator==(const ActivationRecord&) const = default;
};

struct ActivationStore {
  std::string model_config_hash;
  std::string corpus_hash;
  std::size_t segment_len = kDefaultSegmentLen;
  std::vector<ActivationRecord> records;

  /// Records for one hook point, in segment order.
  std::vector<const ActivationRecord*> find(std::size_t layer, Component component) const {
    std::vector<const ActivationRecord*> out;
    for (const auto& r : records)
      if (r.layer == layer && r.component == component) out.push_back(&r);
    return out;
  }

  std::set<HookPoint> hook_points() const {
    std::set<HookPoint> out;
    for (const auto& r : records) out.insert({r.layer, r.component});
    return out;
  }

  bool operator==(const ActivationStore&) const = default;
};

/// Splits a token stream into consecutive non-overlapping segments of at
/// most segment_len tokens (the last one may be shorter).
inline std::vector<TokenSeq> segment_tokens(std::span<const Token> tokens, std::size_t segment_len) {
  require(segment_len >= 1, ErrorCode::InvalidArgument, "segment_len must be >= 1");
  std::vector<TokenSeq> out;
  for (std::size_t s = 0; s < tokens.size(); s += segment_len)
    out.emplace_back(tokens.begin() + s, tokens.begin() + std::min(tokens.size(), s + segment_len));
  return out;
}

inline std::string corpus_hash(const std::vector<TokenSeq>& segments) {
  Fnv1a64 h;
  for (const auto& s : segments) h.update(std::span<const Token>(s));
  return h.hex();
}

inline constexpr std::string_view kStoreMagic = "ASAC1\n";
inline constexpr int kStoreFormatVersion = 1;

inline std::vector<std::uint8_t> encode_store(const ActivationStore& s) {
  std::set<std::tuple<std::size_t, std::size_t, Component>> seen;
  nlohmann::json index = nlohmann::json::array();
  std::vector<std::uint8_t> payload;
  for (const auto& r : s.records) {
    require(seen.insert({r.segment_id, r.layer, r.component}).second, ErrorCode::IndexInconsistent,
            "duplicate (segment, layer, component) record");
    require(r.values.data.size() == r.values.rows * r.values.cols, ErrorCode::Shape, "record values length");
    index.push_back({{"segment_id", r.segment_id},
                     {"layer", r.layer},
                     {"component", std::string(to_string(r.component))},
                     {"n_tokens", r.values.rows},
                     {"dim", r.values.cols},
                     {"byte_offset", payload.size()}});
    io::put_floats(payload, r.values.data);
  }
  const nlohmann::json header = {{"format_version", kStoreFormatVersion},
                                 {"model_config_hash", s.model_config_hash},
                                 {"corpus_hash", s.corpus_hash},
                                 {"segment_len", s.segment_len},
                                 {"records", index}};
  return io::frame(kStoreMagic, header, payload);
}

inline ActivationStore decode_store(std::span<const std::uint8_t> bytes) {
  const auto f = io::unframe(bytes, kStoreMagic, kStoreFormatVersion);
  ActivationStore s;
  s.model_config_hash = io::field<std::string>(f.header, "model_config_hash");
  s.corpus_hash = io::field<std::string>(f.header, "corpus_hash");
  s.segment_len = io::field<std::size_t>(f.header, "segment_len");
  require(f.header.contains("records") && f.header["records"].is_array(), ErrorCode::IndexInconsistent,
          "header lacks record index");
  std::set<std::tuple<std::size_t, std::size_t, Component>> seen;
  std::uint64_t expected_offset = 0;
  for (const auto& e : f.header["records"]) {
    ActivationRecord r;
    r.segment_id = io::field<std::size_t>(e, "segment_id");
    r.layer = io::field<std::size_t>(e, "layer");
    try {
      r.component = parse_component(io::field<std::string>(e, "component"));
    } catch (const Error& err) {
      throw Error(ErrorCode::IndexInconsistent, err.what());
    }
    const auto n = io::field<std::size_t>(e, "n_tokens");
    const auto dim = io::field<std::size_t>(e, "dim");
    const auto offset = io::field<std::uint64_t>(e, "byte_offset");
    const std::uint64_t len = static_cast<std::uint64_t>(n) * dim * sizeof(float);
    require(offset == expected_offset, ErrorCode::IndexInconsistent, "record payloads overlap or leave gaps");
    require(offset <= f.payload.size() && len <= f.payload.size() - offset, ErrorCode::Truncated,
            "record extends past end of file");
    require(seen.insert({r.segment_id, r.layer, r.component}).second, ErrorCode::IndexInconsistent,
            "duplicate (segment, layer, component) record");
    r.values = Matrix(n, dim, io::get_floats(f.payload.subspan(offset, len)));
    expected_offset = offset + len;
    s.records.push_back(std::move(r));
  }
  require(expected_offset == f.payload.size(), ErrorCode::IndexInconsistent, "trailing bytes after last record");
  return s;
}

inline void save_store(const std::filesystem::path& path, const ActivationStore& s) {
  io::write_file_atomic(path, encode_store(s));
}

inline ActivationStore load_store(const std::filesystem::path& path) { return decode_store(io::read_file(path)); }

/// Runs the dense model over every segment and records raw activations at
/// each tap. Segment ids are the positions in `segments`.
inline ActivationStore collect(const ModelConfig& c, const WeightSet& w, const std::vector<TokenSeq>& segments,
                               const std::set<HookPoint>& taps, std::size_t segment_len = kDefaultSegmentLen) {
  ActivationStore s;
  s.model_config_hash = model_fingerprint(c, w);
  s.corpus_hash = corpus_hash(segments);
  s.segment_len = segment_len;
  for (std::size_t seg = 0; seg < segments.size(); ++seg) {
    require(segments[seg].size() <= segment_len, ErrorCode::InvalidArgument, "segment longer than segment_len");
    auto fr = forward(c, w, segments[seg], taps);
    for (auto& [hp, m] : fr.taps) s.records.push_back({seg, hp.layer, hp.component, std::move(m)});
  }
  return s;
}

/// collect() followed by an atomic write to `out`.
inline ActivationStore collect(const ModelConfig& c, const WeightSet& w, const std::vector<TokenSeq>& segments,
                               const std::set<HookPoint>& taps, const std::filesystem::path& out,
                               std::size_t segment_len = kDefaultSegmentLen) {
  ActivationStore s = collect(c, w, segments, taps, segment_len);
  save_store(out, s);
  return s;
}

/// Adds the records of `extra` to the store at `path`. Both must come from
/// the same model and corpus; existing records are never overwritten.
inline ActivationStore append_to_store(const std::filesystem::path& path, const ActivationStore& extra) {
  ActivationStore s = load_store(path);
  require(s.model_config_hash == extra.model_config_hash, ErrorCode::HashMismatch,
          "store model hash " + s.model_config_hash + " != " + extra.model_config_hash);
  require(s.corpus_hash == extra.corpus_hash, ErrorCode::HashMismatch,
          "store corpus hash " + s.corpus_hash + " != " + extra.corpus_hash);
  require(s.segment_len == extra.segment_len, ErrorCode::HashMismatch, "segment_len differs");
  s.records.insert(s.records.end(), extra.records.begin(), extra.records.end());
  save_store(path, s);  // rejects duplicate records
  return s;
}

/// Fraction of entries that are exactly zero (either sign) across all
/// segments of one hook point.
inline double natural_sparsity(const ActivationStore& s, std::size_t layer, Component component) {
  const auto recs = s.find(layer, component);
  require(!recs.empty(), ErrorCode::MissingRecord,
          "no record for layer " + std::to_string(layer) + " " + std::string(to_string(component)));
  std::uint64_t zeros = 0, total = 0;
  for (const auto* r : recs) {
    for (float v : r->values.data) zeros += (v == 0.0f);
    total += r->values.size();
  }
  require(total > 0, ErrorCode::MissingRecord, "records are empty");
  return static_cast<double>(zeros) / static_cast<double>(total);
}

}  // namespace actsparse
