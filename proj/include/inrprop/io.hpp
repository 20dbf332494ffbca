#pragma once

// Persistence: feature volumes (FVOL), network checkpoints (SIRN and the
// FFLD / DFLD wrappers), PGM masks and JSON documents. Binary formats are
// little-endian; see docs/FORMATS.md for byte layouts.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "inrprop/feature_field.hpp"
#include "inrprop/flow_field.hpp"
#include "inrprop/maskops.hpp"
#include "inrprop/matching.hpp"
#include "inrprop/volume.hpp"

namespace inrprop {

using Bytes = std::vector<std::uint8_t>;

/// Writes `bytes` to a temporary sibling of `path`, then renames it over `path`.
void atomic_write(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void atomic_write(const std::filesystem::path& path, std::string_view text);
/// Throws FormatError (offset 0) when the file cannot be opened.
Bytes read_file(const std::filesystem::path& path);

// --- FVOL -------------------------------------------------------------------

inline constexpr std::uint16_t kFvolVersion = 1;
/// Vectors off unit norm by more than this are rejected outright.
inline constexpr double kFvolRejectDeviation = 0.1;

struct FvolLoad {
  FeatureVolume volume;
  /// Vectors renormalized because their norm was off by more than 1e-3.
  std::size_t renormalized = 0;
};

Bytes encode_fvol(const FeatureVolume& volume);
FvolLoad decode_fvol(std::span<const std::uint8_t> bytes);
void write_fvol(const FeatureVolume& volume, const std::filesystem::path& path);
FvolLoad read_fvol(const std::filesystem::path& path);

// --- checkpoints ------------------------------------------------------------

inline constexpr std::uint16_t kSirnVersion = 1;
inline constexpr std::uint16_t kFfldVersion = 1;
inline constexpr std::uint16_t kDfldVersion = 1;

Bytes encode_siren(const SirenNet& net);
/// Decodes a SIRN block starting at `offset`; advances `offset` past it.
SirenNet decode_siren(std::span<const std::uint8_t> bytes, std::size_t& offset);

/// Feature field checkpoint. `meta` is free-form JSON stored alongside
/// (fit config echo, loss trace, source volume dims).
Bytes encode_feature_field(const FeatureField& field, const nlohmann::json& meta = nlohmann::json::object());
FeatureField decode_feature_field(std::span<const std::uint8_t> bytes, nlohmann::json* meta = nullptr);

Bytes encode_displacement(const DisplacementField& field, const nlohmann::json& extra = nlohmann::json::object());
DisplacementField decode_displacement(std::span<const std::uint8_t> bytes, nlohmann::json* meta = nullptr);

// --- PGM ----------------------------------------------------------------------

/// P5, maxval 255; foreground = 255.
Bytes encode_pgm(const BinaryMask& mask);
/// Any nonzero sample is foreground. Accepts maxval 1..255.
BinaryMask decode_pgm(std::span<const std::uint8_t> bytes);
/// P5, maxval 65535, big-endian samples, value = round(p * 65535). Diagnostic only.
Bytes encode_probability_pgm(const ProbabilityField& field);
ProbabilityField decode_probability_pgm(std::span<const std::uint8_t> bytes);

// --- JSON documents -----------------------------------------------------------

struct AnnotationPoint {
  double x = 0.0;
  double y = 0.0;
  std::string label;
  nlohmann::json extra = nlohmann::json::object();
  friend bool operator==(const AnnotationPoint&, const AnnotationPoint&) = default;
};

struct AnnotationDoc {
  std::string video_id;
  int frame = 0;
  Canvas canvas;
  std::optional<std::vector<AnnotationPoint>> points;
  std::optional<std::string> mask_ref;
  /// Fields this version does not know about, kept verbatim.
  nlohmann::json extra = nlohmann::json::object();

  std::vector<Point2> point_list() const;
  friend bool operator==(const AnnotationDoc&, const AnnotationDoc&) = default;
};

/// Throws SchemaError naming the offending field path.
AnnotationDoc parse_annotation(const nlohmann::json& j);
nlohmann::json to_json(const AnnotationDoc& doc);
AnnotationDoc read_annotation(const std::filesystem::path& path);
void write_annotation(const AnnotationDoc& doc, const std::filesystem::path& path);

nlohmann::json to_json(const MatchResult& r);
MatchResult match_result_from_json(const nlohmann::json& j, const std::string& path = "");

struct PropagationDoc {
  std::string engine_version;
  std::optional<std::uint64_t> seed;
  nlohmann::json source;  ///< AnnotationDoc JSON or {"ref": path}
  std::string target_video;
  int target_frame = 0;
  std::string mode;       ///< "points" or "mask"
  nlohmann::json configs; ///< echo of every config used; mandatory
  std::vector<MatchResult> results;
  nlohmann::json mask_outputs = nlohmann::json::object();
  nlohmann::json extra = nlohmann::json::object();

  friend bool operator==(const PropagationDoc&, const PropagationDoc&) = default;
};

/// Throws SchemaError when seed or configs are missing.
void validate(const PropagationDoc& doc);
PropagationDoc parse_propagation(const nlohmann::json& j);
nlohmann::json to_json(const PropagationDoc& doc);
PropagationDoc read_propagation(const std::filesystem::path& path);
void write_propagation(const PropagationDoc& doc, const std::filesystem::path& path);

/// Stable text form used for every JSON file this engine writes.
std::string dump_json(const nlohmann::json& j);
nlohmann::json parse_json_text(std::string_view text, const std::string& what);
nlohmann::json read_json(const std::filesystem::path& path);

/// Engine version string echoed into documents.
std::string_view engine_version();

}  // namespace inrprop
