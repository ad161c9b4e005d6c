#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ecgcrnn {

/// Rhythm labels in confusion-matrix order.
enum class RhythmClass : std::uint8_t {
  NormalRhythm = 0,
  AtrialFibrillation = 1,
  OtherRhythm = 2,
  Noise = 3,
};

inline constexpr std::size_t kNumClasses = 4;
inline constexpr std::array<RhythmClass, kNumClasses> kAllClasses = {
    RhythmClass::NormalRhythm, RhythmClass::AtrialFibrillation, RhythmClass::OtherRhythm,
    RhythmClass::Noise};

constexpr std::size_t index_of(RhythmClass c) noexcept { return static_cast<std::size_t>(c); }
RhythmClass class_at(std::size_t index);

/// Single-character label used by REFERENCE.csv: N, A, O, ~.
char class_token(RhythmClass c) noexcept;
std::optional<RhythmClass> class_from_token(std::string_view token) noexcept;
std::string_view class_name(RhythmClass c) noexcept;

struct EcgRecord {
  std::string id;
  double fs = 0.0;
  std::vector<double> samples;
  std::optional<RhythmClass> label;
};

/// Throws Errc::BadRecord when samples are empty or fs is not positive.
void validate_record(const EcgRecord& record);

struct ManifestEntry {
  std::string id;
  RhythmClass label;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::filesystem::path source_dir;
};

struct ClassShare {
  std::size_t count = 0;
  double proportion = 0.0;
};
using ClassBreakdown = std::array<ClassShare, kNumClasses>;

enum class SplitPart : std::uint8_t { Train, Test, Validation };
std::string_view split_part_name(SplitPart part) noexcept;

struct SplitAssignment {
  std::vector<std::string> train;
  std::vector<std::string> test;
  std::vector<std::string> validation;
  std::uint64_t seed = 0;
};

// --- Level-4 MAT containers ---------------------------------------------

/// Decodes the first matrix of a Level-4 MAT file. Values are returned in
/// storage order, converted to double.
std::vector<double> parse_mat4(std::span<const std::byte> bytes);

struct Mat4Matrix {
  std::string name;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<double> values;
};
Mat4Matrix parse_mat4_matrix(std::span<const std::byte> bytes);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);

/// Loads `<path>` as a challenge record (single "val" matrix).
EcgRecord load_mat_record(const std::filesystem::path& path, double fs,
                          std::optional<RhythmClass> label = std::nullopt);

// --- manifests and splits --------------------------------------------------

DatasetManifest load_manifest(std::string_view labels_text);
DatasetManifest load_manifest_dir(const std::filesystem::path& dataset_dir);

ClassBreakdown class_breakdown(const DatasetManifest& manifest);

/// Stratified train/test partition. Per-class train counts are
/// round(train_size * proportion); the rounding residual goes to the
/// largest class (spilling to the next largest if a class bound is hit).
SplitAssignment stratified_split(const DatasetManifest& manifest, std::size_t train_size,
                                 std::uint64_t seed, std::size_t validation_size = 0);

/// `id<TAB>train|test|val` lines, manifest order, LF endings.
std::string format_split(const DatasetManifest& manifest, const SplitAssignment& split);
SplitAssignment parse_split(std::string_view text);

/// Sub-manifest restricted to the given ids (manifest order preserved).
DatasetManifest subset(const DatasetManifest& manifest, std::span<const std::string> ids);

}  // namespace ecgcrnn
