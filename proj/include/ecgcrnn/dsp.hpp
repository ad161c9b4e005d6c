#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ecgcrnn/record_io.hpp"

namespace ecgcrnn::dsp {

/// Butterworth band-pass request. `order` is the per-direction prototype
/// order; the digital filter has 2*order poles.
struct BandPassSpec {
  double low_cut = 0.5;
  double high_cut = 40.0;
  int order = 2;
  double fs = 300.0;
};

/// One second-order section, a0 normalized to 1, transposed direct form II.
struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;
};

bool is_stable(const Biquad& s) noexcept;

struct IirCoefficients {
  std::vector<Biquad> sections;
  double gain = 1.0;
  double fs = 0.0;
};

IirCoefficients design_bandpass(const BandPassSpec& spec);

std::complex<double> frequency_response(const IirCoefficients& coeffs, double freq_hz);
double magnitude_response(const IirCoefficients& coeffs, double freq_hz);

/// Samples of odd-reflection padding added at each end by filtfilt.
std::size_t filtfilt_pad_length(const IirCoefficients& coeffs) noexcept;

/// Single causal pass with steady-state initial conditions scaled by x[0].
std::vector<double> sosfilt(const IirCoefficients& coeffs, std::span<const double> x);

/// Zero-phase filtering: mean of the forward-backward and backward-forward
/// passes over the padded signal. Requires x.size() > 3 * pad length.
std::vector<double> filtfilt(const IirCoefficients& coeffs, std::span<const double> x);

/// Windowed-sinc sample-rate conversion (Kaiser beta 8, 64 input taps per
/// output sample). Output length is round(n * fs_out / fs_in). Rational
/// ratios with a small interpolation factor use a precomputed polyphase bank.
std::vector<double> resample(std::span<const double> x, double fs_in, double fs_out);

/// Population (divide-by-n) standard deviation, two-pass.
double population_std(std::span<const double> x);

enum class ScaleProvenance { TrainingSetMean, PerSignalStd };

struct ScaleFactor {
  double value = 1.0;
  ScaleProvenance provenance = ScaleProvenance::TrainingSetMean;
};

/// Mean over records of the per-record population standard deviation.
ScaleFactor training_scale(std::span<const std::vector<double>> signals);
ScaleFactor training_scale(std::span<const EcgRecord> records);

std::vector<double> standardize_per_signal(std::span<const double> x);

/// Band-pass then resample: the offline front end minus scaling.
struct PreprocessConfig {
  double low_cut = 0.5;
  double high_cut = 40.0;
  int order = 2;
  double target_fs = 200.0;
};

std::vector<double> preprocess(std::span<const double> x, double fs, const PreprocessConfig& cfg);

/// Tag stored alongside cached preprocessed data; any change to the front
/// end parameters changes the tag.
std::string preprocess_tag(const PreprocessConfig& cfg);

}  // namespace ecgcrnn::dsp
