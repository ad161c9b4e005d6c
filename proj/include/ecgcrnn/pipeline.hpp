#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecgcrnn/record_io.hpp"
#include "ecgcrnn/rng.hpp"

namespace ecgcrnn::pipeline {

struct WindowConfig {
  std::size_t window_len = 512;
  std::size_t stride = 256;
};

void validate(const WindowConfig& cfg);

struct AugmentationConfig {
  double flip_prob = 0.5;
  double resample_prob = 0.8;
  double stretch_low = -0.05;
  double stretch_high = 0.05;
  bool enabled = true;
};

void validate(const AugmentationConfig& cfg);

/// A record cut into windows: nw x window_len x 1, row-major by window.
struct WindowTensor {
  std::size_t nw = 0;
  std::size_t window_len = 0;
  std::size_t pad_count = 0;
  std::vector<double> values;
  std::string record_id;

  std::span<const double> window(std::size_t k) const {
    return std::span<const double>(values).subspan(k * window_len, window_len);
  }
};

struct Batch {
  std::vector<WindowTensor> tensors;
  std::vector<RhythmClass> labels;
  std::vector<std::size_t> record_indices;

  std::size_t nw() const { return tensors.empty() ? 0 : tensors.front().nw; }
  std::size_t size() const { return tensors.size(); }
};

/// floor((n - window_len) / stride) + 1; throws TooShort for n < window_len.
std::size_t max_windows(std::size_t n, const WindowConfig& cfg = {});

/// Largest admissible first-window offset when nw windows are extracted.
std::size_t max_offset(std::size_t n, std::size_t nw, const WindowConfig& cfg = {});

/// Uniform draw from {0, ..., max_offset(n, nw)}.
std::size_t sample_offset(std::size_t n, std::size_t nw, Rng& rng, const WindowConfig& cfg = {});

/// Windows k = x[offset + k*stride, offset + k*stride + window_len) for
/// k < max_windows(x.size()); TooShort if the offset leaves no room for them.
WindowTensor extract_windows(std::span<const double> x, std::size_t offset,
                             const WindowConfig& cfg = {}, std::string record_id = {});

/// Prepends all-zero windows until the tensor holds `nw` windows.
WindowTensor pad_front(WindowTensor t, std::size_t nw);

/// Outcome of the random choices made by augment(), separable from the
/// signal so batch planning can size records before touching samples.
struct AugmentDraw {
  bool flip = false;
  std::optional<double> stretch;  // relative length change u; factor 1 + u
};

AugmentDraw draw_augmentation(const AugmentationConfig& cfg, Rng& rng);
std::size_t augmented_length(std::size_t n, const AugmentDraw& draw);
std::vector<double> apply_augmentation(std::span<const double> x, const AugmentDraw& draw);

/// Minimum signal length accepted by augment() when enabled.
std::size_t min_augment_length(const AugmentationConfig& cfg, const WindowConfig& wcfg = {});

/// Stretch (with probability resample_prob) then sign flip (flip_prob).
std::vector<double> augment(std::span<const double> x, const AugmentationConfig& cfg, Rng& rng,
                            const WindowConfig& wcfg = {});

struct LabeledSignal {
  std::string id;
  std::vector<double> samples;
  RhythmClass label = RhythmClass::NormalRhythm;
};

/// Per-record decisions for one epoch.
struct PlannedRecord {
  std::size_t record = 0;
  AugmentDraw draw;
  std::size_t length = 0;  // after augmentation
  std::size_t nw = 0;
  std::size_t offset = 0;
};

struct BatchPlan {
  std::vector<std::vector<PlannedRecord>> batches;
  std::vector<std::size_t> skipped;  // record indices too short to window
};

/// Draws augmentation and offsets per record from streams derived from
/// (seed, epoch, record index), sorts by duration, groups into batches.
/// With augmentation disabled every offset is 0 and no randomness is used.
BatchPlan plan_batches(std::span<const std::size_t> lengths, std::size_t batch_size,
                       const AugmentationConfig& cfg, const WindowConfig& wcfg, std::uint64_t seed,
                       std::uint64_t epoch);

Batch build_batch(std::span<const LabeledSignal> records, std::span<const PlannedRecord> plan,
                  const WindowConfig& wcfg);

std::vector<Batch> make_batches(std::span<const LabeledSignal> records, std::size_t batch_size,
                                const AugmentationConfig& cfg, const WindowConfig& wcfg,
                                std::uint64_t seed, std::uint64_t epoch = 0);

}  // namespace ecgcrnn::pipeline
