#include "ecgcrnn/dsp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "ecgcrnn/error.hpp"

namespace ecgcrnn::dsp {

namespace {

using cplx = std::complex<double>;

Biquad section_from_poles(cplx p1, cplx p2) {
  Biquad s;
  // One zero at z = 1 and one at z = -1 per section: 1 - z^-2.
  s.b0 = 1.0;
  s.b1 = 0.0;
  s.b2 = -1.0;
  s.a1 = -(p1 + p2).real();
  s.a2 = (p1 * p2).real();
  return s;
}

cplx section_response(const Biquad& s, cplx zinv) {
  const cplx num = s.b0 + zinv * (s.b1 + zinv * s.b2);
  const cplx den = 1.0 + zinv * (s.a1 + zinv * s.a2);
  return num / den;
}

}  // namespace

bool is_stable(const Biquad& s) noexcept {
  return std::abs(s.a2) < 1.0 && std::abs(s.a1) < 1.0 + s.a2;
}

IirCoefficients design_bandpass(const BandPassSpec& spec) {
  if (!(spec.fs > 0.0) || !(spec.low_cut > 0.0) || !(spec.low_cut < spec.high_cut) ||
      !(spec.high_cut < spec.fs / 2.0) || spec.order < 1 || spec.order > 16)
    throw Error(Errc::BadSpec, "band-pass needs 0 < low < high < fs/2 and 1 <= order <= 16");

  const int n = spec.order;
  const double two_fs = 2.0 * spec.fs;
  const double w1 = two_fs * std::tan(std::numbers::pi * spec.low_cut / spec.fs);
  const double w2 = two_fs * std::tan(std::numbers::pi * spec.high_cut / spec.fs);
  const double w0 = std::sqrt(w1 * w2);
  const double bw = w2 - w1;

  std::vector<cplx> poles;
  poles.reserve(2 * static_cast<std::size_t>(n));
  for (int k = 1; k <= n; ++k) {
    const double theta = std::numbers::pi * (2.0 * k + n - 1.0) / (2.0 * n);
    const cplx proto = std::polar(1.0, theta);
    const cplx half = proto * (bw / 2.0);
    const cplx root = std::sqrt(half * half - w0 * w0);
    for (const cplx s : {half + root, half - root}) poles.push_back((two_fs + s) / (two_fs - s));
  }

  std::vector<cplx> upper;
  std::vector<double> real;
  for (const cplx& z : poles) {
    if (std::abs(z.imag()) > 1e-12 * std::max(1.0, std::abs(z))) {
      if (z.imag() > 0) upper.push_back(z);
    } else {
      real.push_back(z.real());
    }
  }
  std::sort(real.begin(), real.end());
  if (real.size() % 2 != 0 || upper.size() + real.size() / 2 != static_cast<std::size_t>(n))
    throw Error(Errc::BadSpec, "pole pairing failed");

  IirCoefficients out;
  out.fs = spec.fs;
  for (const cplx& z : upper) out.sections.push_back(section_from_poles(z, std::conj(z)));
  for (std::size_t i = 0; i < real.size(); i += 2)
    out.sections.push_back(section_from_poles(real[i], real[i + 1]));
  std::sort(out.sections.begin(), out.sections.end(),
            [](const Biquad& a, const Biquad& b) { return a.a2 < b.a2; });

  // Unit gain at the band center (prototype DC maps to w0).
  const double center = 2.0 * std::atan(w0 / two_fs);
  out.gain = 1.0;
  out.gain = 1.0 / std::abs(frequency_response(out, center * spec.fs / (2.0 * std::numbers::pi)));

  for (const auto& s : out.sections)
    if (!is_stable(s)) throw Error(Errc::BadSpec, "designed section is unstable");
  return out;
}

std::complex<double> frequency_response(const IirCoefficients& coeffs, double freq_hz) {
  const cplx zinv = std::polar(1.0, -2.0 * std::numbers::pi * freq_hz / coeffs.fs);
  cplx h = coeffs.gain;
  for (const auto& s : coeffs.sections) h *= section_response(s, zinv);
  return h;
}

double magnitude_response(const IirCoefficients& coeffs, double freq_hz) {
  return std::abs(frequency_response(coeffs, freq_hz));
}

std::size_t filtfilt_pad_length(const IirCoefficients& coeffs) noexcept {
  return 3 * (2 * coeffs.sections.size());
}

std::vector<double> sosfilt(const IirCoefficients& coeffs, std::span<const double> x) {
  std::vector<double> y(x.begin(), x.end());
  if (y.empty()) return y;
  double level = coeffs.gain * x[0];
  for (double& v : y) v *= coeffs.gain;
  for (const auto& s : coeffs.sections) {
    // Steady state of a DF2T biquad driven by a constant `level`.
    const double dc = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
    double z1 = (dc - s.b0) * level;
    double z2 = (s.b2 - s.a2 * dc) * level;
    for (double& v : y) {
      const double in = v;
      const double out = s.b0 * in + z1;
      z1 = s.b1 * in - s.a1 * out + z2;
      z2 = s.b2 * in - s.a2 * out;
      v = out;
    }
    level *= dc;
  }
  return y;
}

std::vector<double> filtfilt(const IirCoefficients& coeffs, std::span<const double> x) {
  const std::size_t pad = filtfilt_pad_length(coeffs);
  const std::size_t n = x.size();
  if (n <= 3 * pad)
    throw Error(Errc::SignalTooShort, "filtfilt needs more than " + std::to_string(3 * pad) +
                                          " samples, got " + std::to_string(n));

  std::vector<double> ext;
  ext.reserve(n + 2 * pad);
  for (std::size_t i = pad; i >= 1; --i) ext.push_back(2.0 * x[0] - x[i]);
  ext.insert(ext.end(), x.begin(), x.end());
  for (std::size_t i = 1; i <= pad; ++i) ext.push_back(2.0 * x[n - 1] - x[n - 1 - i]);

  // Forward-backward and backward-forward differ at the edges because of the
  // initial conditions; their mean is exactly time-reversal symmetric.
  std::vector<double> fb = sosfilt(coeffs, ext);
  std::reverse(fb.begin(), fb.end());
  fb = sosfilt(coeffs, fb);
  std::reverse(fb.begin(), fb.end());

  std::vector<double> bf(ext.rbegin(), ext.rend());
  bf = sosfilt(coeffs, bf);
  std::reverse(bf.begin(), bf.end());
  bf = sosfilt(coeffs, bf);

  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = 0.5 * (fb[pad + i] + bf[pad + i]);
  return y;
}

// --- resampling --------------------------------------------------------------

namespace {

constexpr int kHalfTaps = 32;
constexpr int kTaps = 2 * kHalfTaps;
constexpr double kKaiserBeta = 8.0;
constexpr std::size_t kWindowTable = 16384;

double kaiser_exact(double u) {
  if (std::abs(u) >= 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, kKaiserBeta * std::sqrt(1.0 - u * u)) /
         std::cyl_bessel_i(0.0, kKaiserBeta);
}

const std::vector<double>& kaiser_table() {
  static const std::vector<double> table = [] {
    std::vector<double> t(kWindowTable + 1);
    for (std::size_t i = 0; i <= kWindowTable; ++i)
      t[i] = kaiser_exact(static_cast<double>(i) / static_cast<double>(kWindowTable));
    return t;
  }();
  return table;
}

double kaiser_lookup(double u) {
  u = std::abs(u);
  if (u >= 1.0) return 0.0;
  const double pos = u * static_cast<double>(kWindowTable);
  const auto i = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(i);
  const auto& t = kaiser_table();
  return t[i] + frac * (t[i + 1] - t[i]);
}

double sinc(double v) {
  if (v == 0.0) return 1.0;
  const double a = std::numbers::pi * v;
  return std::sin(a) / a;
}

// Weights for taps k0-31 .. k0+32 at fractional position frac in [0, 1).
template <typename Window>
void tap_weights(double frac, double cutoff, Window window, std::array<double, kTaps>& w) {
  double sum = 0.0;
  for (int j = 0; j < kTaps; ++j) {
    const double d = frac + static_cast<double>(kHalfTaps - 1 - j);
    w[static_cast<std::size_t>(j)] = cutoff * sinc(cutoff * d) * window(d / kHalfTaps);
    sum += w[static_cast<std::size_t>(j)];
  }
  for (double& v : w) v /= sum;
}

class EdgeReader {
 public:
  explicit EdgeReader(std::span<const double> x) : x_(x), n_(static_cast<long long>(x.size())) {}

  double operator()(long long k) const {
    if (k >= 0 && k < n_) return x_[static_cast<std::size_t>(k)];
    if (k < 0) return 2.0 * x_[0] - x_[static_cast<std::size_t>(std::min(-k, n_ - 1))];
    const long long mirror = std::max(2 * (n_ - 1) - k, 0LL);
    return 2.0 * x_[static_cast<std::size_t>(n_ - 1)] - x_[static_cast<std::size_t>(mirror)];
  }

 private:
  std::span<const double> x_;
  long long n_;
};

bool as_integer(double v, long long& out) {
  const double r = std::round(v);
  if (std::abs(v - r) > 1e-9 || r <= 0 || r > 1e9) return false;
  out = static_cast<long long>(r);
  return true;
}

}  // namespace

std::vector<double> resample(std::span<const double> x, double fs_in, double fs_out) {
  if (!(fs_in > 0.0) || !(fs_out > 0.0) || !std::isfinite(fs_in) || !std::isfinite(fs_out))
    throw Error(Errc::BadRate, "sampling rates must be positive");
  if (x.size() < 2) throw Error(Errc::SignalTooShort, "resample needs at least 2 samples");
  if (fs_in == fs_out) return {x.begin(), x.end()};

  const double ratio = fs_out / fs_in;
  const auto out_len = static_cast<std::size_t>(std::llround(static_cast<double>(x.size()) * ratio));
  const double cutoff = std::min(1.0, ratio);
  const EdgeReader at(x);
  std::vector<double> y(out_len);
  std::array<double, kTaps> w{};

  long long in_i = 0, out_i = 0;
  const bool rational = as_integer(fs_in, in_i) && as_integer(fs_out, out_i);
  const long long g = rational ? std::gcd(in_i, out_i) : 1;
  const long long up = rational ? out_i / g : 0;
  const long long down = rational ? in_i / g : 0;

  if (rational && up <= 64) {
    std::vector<std::array<double, kTaps>> bank(static_cast<std::size_t>(up));
    for (long long p = 0; p < up; ++p)
      tap_weights(static_cast<double>(p) / static_cast<double>(up), cutoff, kaiser_exact,
                  bank[static_cast<std::size_t>(p)]);
    for (std::size_t m = 0; m < out_len; ++m) {
      const long long num = static_cast<long long>(m) * down;
      const long long k0 = num / up;
      const auto& taps = bank[static_cast<std::size_t>(num % up)];
      double acc = 0.0;
      for (int j = 0; j < kTaps; ++j) acc += taps[static_cast<std::size_t>(j)] * at(k0 - kHalfTaps + 1 + j);
      y[m] = acc;
    }
    return y;
  }

  const double step = fs_in / fs_out;
  for (std::size_t m = 0; m < out_len; ++m) {
    const double t = static_cast<double>(m) * step;
    const double base = std::floor(t);
    const auto k0 = static_cast<long long>(base);
    tap_weights(t - base, cutoff, kaiser_lookup, w);
    double acc = 0.0;
    for (int j = 0; j < kTaps; ++j) acc += w[static_cast<std::size_t>(j)] * at(k0 - kHalfTaps + 1 + j);
    y[m] = acc;
  }
  return y;
}

// --- scaling -----------------------------------------------------------------

double population_std(std::span<const double> x) {
  if (x.empty()) throw Error(Errc::EmptyInput, "standard deviation of an empty signal");
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / n);
}

ScaleFactor training_scale(std::span<const std::vector<double>> signals) {
  if (signals.empty()) throw Error(Errc::EmptyInput, "training scale needs at least one record");
  double sum = 0.0;
  for (const auto& s : signals) {
    if (s.empty()) throw Error(Errc::EmptyInput, "training scale got an empty record");
    sum += population_std(s);
  }
  const double value = sum / static_cast<double>(signals.size());
  if (!(value > 0.0) || !std::isfinite(value))
    throw Error(Errc::ZeroVariance, "every training record is constant");
  return {value, ScaleProvenance::TrainingSetMean};
}

ScaleFactor training_scale(std::span<const EcgRecord> records) {
  std::vector<std::vector<double>> signals;
  signals.reserve(records.size());
  for (const auto& r : records) signals.push_back(r.samples);
  return training_scale(signals);
}

std::vector<double> standardize_per_signal(std::span<const double> x) {
  if (x.size() < 2) throw Error(Errc::SignalTooShort, "standardization needs at least 2 samples");
  const double s = population_std(x);
  if (!(s > 0.0)) throw Error(Errc::ZeroVariance, "cannot standardize a constant signal");
  std::vector<double> out(x.begin(), x.end());
  for (double& v : out) v /= s;
  return out;
}

std::vector<double> preprocess(std::span<const double> x, double fs, const PreprocessConfig& cfg) {
  const auto coeffs = design_bandpass({cfg.low_cut, cfg.high_cut, cfg.order, fs});
  const auto filtered = filtfilt(coeffs, x);
  return resample(filtered, fs, cfg.target_fs);
}

std::string preprocess_tag(const PreprocessConfig& cfg) {
  std::ostringstream os;
  os.precision(17);
  os << "bp=" << cfg.low_cut << "-" << cfg.high_cut << ";order=" << cfg.order
     << ";fs=" << cfg.target_fs << ";rs=kaiser8x64;pad=odd6s;v1";
  return os.str();
}

}  // namespace ecgcrnn::dsp
