#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ecgcrnn/dsp.hpp"
#include "ecgcrnn/pipeline.hpp"
#include "ecgcrnn/record_io.hpp"
#include "ecgcrnn/train.hpp"

namespace ecgcrnn::cli {

/// Flat `key = value` lines; '#' starts a comment. Throws BadConfig on
/// malformed lines or repeated keys.
std::map<std::string, std::string> parse_config(std::string_view text);

/// Preprocessed record cache written by `prepare`.
///   8 bytes  magic "ECGPREP1"
///   u32      format version
///   u32 + n  front-end tag (changes whenever the dsp parameters change)
///   f64      source sampling rate, f64 target rate
///   f64      training-set scale
///   u32      record count, then per record:
///            u32 + n id, u8 label, u8 split part, u64 count, count x f64
/// All integers and floats little-endian. Samples are stored unscaled.
inline constexpr char kCacheMagic[8] = {'E', 'C', 'G', 'P', 'R', 'E', 'P', '1'};
inline constexpr std::uint32_t kCacheVersion = 1;

struct PreparedRecord {
  std::string id;
  RhythmClass label = RhythmClass::NormalRhythm;
  SplitPart part = SplitPart::Train;
  std::vector<double> samples;
};

struct PreparedCache {
  std::string tag;
  double source_fs = 300.0;
  double target_fs = 200.0;
  double scale = 1.0;
  std::vector<PreparedRecord> records;
};

std::vector<std::byte> encode_cache(const PreparedCache& cache);
/// Throws BadCheckpoint on a wrong magic/version, or when `expected_tag` is
/// non-empty and differs from the stored tag.
PreparedCache decode_cache(std::span<const std::byte> bytes, const std::string& expected_tag = {});

/// Records of one split part with the stored scale applied.
std::vector<pipeline::LabeledSignal> signals_of(const PreparedCache& cache, SplitPart part);

/// Table-1 style class breakdown.
std::string dataset_report(const DatasetManifest& manifest, const SplitAssignment& split);

/// Two stacked panels: cross-entropy loss on top, accuracy below.
std::string history_svg(std::span<const train::EpochRecord> history);

/// `freq_hz,magnitude` rows from 0 to fs/2.
std::string filter_response_csv(const dsp::IirCoefficients& coeffs, std::size_t points);

/// Entry point of the command-line tool. Returns the process exit code:
/// 0 success, 1 runtime failure, 2 configuration error.
int run(int argc, const char* const* argv);

}  // namespace ecgcrnn::cli
