#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>
#include <random>

#include "ecgcrnn/dsp.hpp"
#include "helpers.hpp"

using namespace ecgcrnn;
using testutil::error_code_of;

namespace {

const dsp::IirCoefficients& default_filter() {
  static const auto c = dsp::design_bandpass({0.5, 40.0, 2, 300.0});
  return c;
}

// butter(2, [0.5, 40], 'bandpass', fs=300, output='sos') from scipy 1.15
const double kScipySos[2][6] = {
    {0.10625589984201025, 0.2125117996840205, 0.10625589984201025, 1, -0.8916926889992716, 0.32005981978165865},
    {1, -2, 1, 1, -1.9851964160688582, 0.9853078294902022}};

double scipy_magnitude(double f, double fs) {
  const std::complex<double> z = std::polar(1.0, -2.0 * M_PI * f / fs);
  std::complex<double> h = 1.0;
  for (const auto& s : kScipySos)
    h *= (s[0] + s[1] * z + s[2] * z * z) / (s[3] + s[4] * z + s[5] * z * z);
  return std::abs(h);
}

// 0.5 * (sosfiltfilt(sos, x) + sosfiltfilt(sos, x[::-1])[::-1]) with padtype='odd', padlen=12,
// x[i] = sin(0.1 i) + 0.5 cos(0.37 i) + 0.1 (i mod 7)
const double kScipyFiltfilt[64] = {
    0.4245984058690667, 0.5690085667767619, 0.6859570524359211, 0.7536036547044331,
    0.7556043166961923, 0.6818583534127656, 0.5471152713164769, 0.41444887814183895,
    0.370195694484099, 0.45875300889230464, 0.6574865072788818, 0.903796935760821,
    1.12805565223877, 1.287434874607659, 1.3952943146931687, 1.4989078138125715,
    1.616668565083483, 1.7152431600134674, 1.7379077148844329, 1.6369722902595352,
    1.40498876017037, 1.0996040786048757, 0.8154458159998683, 0.615009058028271,
    0.4999086163525771, 0.4345498382947323, 0.3757619224839073, 0.30346512285719585,
    0.2473032846325228, 0.26238469626575933, 0.36557673038766103, 0.5129854400669681,
    0.6298301547225784, 0.6454170860970201, 0.527560316957604, 0.3108733336433738,
    0.07184935436578883, -0.13773480841692903, -0.3180689877096392, -0.4973637721531707,
    -0.7032019428741353, -0.9339825904624769, -1.1352405954609126, -1.2272986203169753,
    -1.172346343090112, -0.9998583476057392, -0.7787478227259801, -0.5832776823960405,
    -0.45826267325978864, -0.3891936397426969, -0.3245829768679861, -0.23934126043489928,
    -0.1585777558220407, -0.13039374737320256, -0.1945333600928225, -0.3520046661707737,
    -0.5407836621756368, -0.664521444320542, -0.6630028887134631, -0.5438405990802901,
    -0.3633303081788472, -0.2001465494771825, -0.11914205365929185, -0.11772903918881222};

// Amplitude and phase of the f-Hz component by projection on sin/cos.
std::pair<double, double> project(const std::vector<double>& y, double f, double fs, std::size_t skip) {
  double s = 0, c = 0;
  std::size_t n = 0;
  for (std::size_t i = skip; i + skip < y.size(); ++i, ++n) {
    const double w = 2 * M_PI * f * static_cast<double>(i) / fs;
    s += y[i] * std::sin(w);
    c += y[i] * std::cos(w);
  }
  return {2.0 * std::hypot(s, c) / static_cast<double>(n), std::atan2(c, s)};
}

}  // namespace

TEST_SUITE("dsp") {

TEST_CASE("band-pass design meets the Butterworth definition") {
  const auto& c = default_filter();
  CHECK(dsp::magnitude_response(c, 0.0) == 0.0);
  CHECK(dsp::magnitude_response(c, std::sqrt(0.5 * 40.0)) >= 0.99);
  CHECK(dsp::magnitude_response(c, 0.5) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.01));
  CHECK(dsp::magnitude_response(c, 40.0) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.01));
  for (const auto& s : c.sections) CHECK(dsp::is_stable(s));
  CHECK(error_code_of([] { dsp::design_bandpass({40.0, 0.5, 2, 300.0}); }) == Errc::BadSpec);
  CHECK(error_code_of([] { dsp::design_bandpass({0.5, 150.0, 2, 300.0}); }) == Errc::BadSpec);
  CHECK(error_code_of([] { dsp::design_bandpass({0.5, 40.0, 0, 300.0}); }) == Errc::BadSpec);
}

TEST_CASE("cascade response equals the reference design") {
  const auto& c = default_filter();
  for (double f = 0.0; f <= 150.0; f += 0.25) {
    CAPTURE(f);
    CHECK(std::abs(dsp::magnitude_response(c, f) - scipy_magnitude(f, 300.0)) < 1e-10);
  }
}

TEST_CASE("designs on a grid are stable and block DC") {
  for (double fs : {200.0, 300.0})
    for (int order = 1; order <= 4; ++order)
      for (double lo : {0.1, 0.5, 2.0, 10.0})
        for (double hi : {15.0, 40.0, 0.45 * fs}) {
          const auto c = dsp::design_bandpass({lo, hi, order, fs});
          CAPTURE(fs);
          CAPTURE(order);
          CAPTURE(lo);
          CAPTURE(hi);
          for (const auto& s : c.sections) CHECK(dsp::is_stable(s));
          CHECK(dsp::magnitude_response(c, 0.0) == 0.0);
          CHECK(dsp::magnitude_response(c, lo) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.01));
          CHECK(dsp::magnitude_response(c, hi) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.01));
        }
}

TEST_CASE("filtfilt matches the reference forward-backward filter") {
  std::vector<double> x(64);
  for (std::size_t i = 0; i < 64; ++i)
    x[i] = std::sin(0.1 * i) + 0.5 * std::cos(0.37 * i) + 0.1 * static_cast<double>(i % 7);
  CHECK(dsp::filtfilt_pad_length(default_filter()) == 12);
  const auto y = dsp::filtfilt(default_filter(), x);
  REQUIRE(y.size() == 64);
  for (std::size_t i = 0; i < 64; ++i) {
    CAPTURE(i);
    CHECK(std::abs(y[i] - kScipyFiltfilt[i]) < 1e-10);
  }
  std::vector<double> too_short(36, 1.0);
  CHECK(error_code_of([&] { dsp::filtfilt(default_filter(), too_short); }) == Errc::SignalTooShort);
}

TEST_CASE("filtfilt removes DC") {
  const std::vector<double> x(3000, 5.0);
  const auto y = dsp::filtfilt(default_filter(), x);
  double peak = 0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  CHECK(peak < 0.05);
}

TEST_CASE("pass-band sinusoid keeps |H|^2 amplitude and zero phase") {
  const auto& c = default_filter();
  for (double f : {2.0, 10.0, 25.0}) {
    CAPTURE(f);
    const auto x = testutil::sine(3000, f, 300.0);
    const auto y = dsp::filtfilt(c, x);
    const double h = dsp::magnitude_response(c, f);
    const auto [amp, phase] = project(y, f, 300.0, 300);
    CHECK(std::abs(amp - h * h) < 0.01 * h * h);
    CHECK(std::abs(phase) * 180.0 / M_PI < 0.5);

    // cross-correlation peak at lag 0
    double best = -1e300;
    int best_lag = 99;
    for (int lag = -5; lag <= 5; ++lag) {
      double acc = 0;
      for (int i = 300; i < 2700; ++i) acc += x[i] * y[i + lag];
      if (acc > best) {
        best = acc;
        best_lag = lag;
      }
    }
    CHECK(best_lag == 0);
  }
}

TEST_CASE("filtfilt is linear and time-reversal symmetric") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> x(2000), y(2000);
  for (auto& v : x) v = d(gen);
  for (auto& v : y) v = d(gen);
  const double a = 2.5, b = -0.75;
  std::vector<double> mix(2000);
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
  const auto fx = dsp::filtfilt(default_filter(), x);
  const auto fy = dsp::filtfilt(default_filter(), y);
  const auto fm = dsp::filtfilt(default_filter(), mix);
  double scale = 0;
  for (double v : fm) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < fm.size(); ++i) CHECK(std::abs(fm[i] - (a * fx[i] + b * fy[i])) <= 1e-9 * scale);

  std::vector<double> rx(x.rbegin(), x.rend());
  auto frx = dsp::filtfilt(default_filter(), rx);
  std::reverse(frx.begin(), frx.end());
  double worst = 0, peak = 0;
  for (std::size_t i = 0; i < fx.size(); ++i) {
    worst = std::max(worst, std::abs(frx[i] - fx[i]));
    peak = std::max(peak, std::abs(fx[i]));
  }
  CHECK(worst <= 1e-9 * peak);
}

TEST_CASE("resampler length and identity") {
  const auto x = testutil::sine(3000, 5.0, 300.0);
  CHECK(dsp::resample(x, 300.0, 200.0).size() == 2000);
  CHECK(dsp::resample(x, 300.0, 300.0) == x);
  CHECK(dsp::resample(x, 300.0, 250.0).size() == 2500);
  CHECK(dsp::resample(std::vector<double>(1001, 0.0), 1.0, 1.03).size() == 1031);
  CHECK(error_code_of([&] { dsp::resample(x, 0.0, 200.0); }) == Errc::BadRate);
  CHECK(error_code_of([&] { dsp::resample(x, 300.0, -1.0); }) == Errc::BadRate);
  CHECK(error_code_of([] { dsp::resample(std::vector<double>{1.0}, 300.0, 200.0); }) == Errc::SignalTooShort);
}

TEST_CASE("resampled band-limited tones keep amplitude and frequency") {
  struct Case {
    double fin, fout, f;
  };
  for (const Case c : {Case{300, 200, 5}, Case{300, 200, 40}, Case{300, 200, 79}, Case{200, 300, 30},
                       Case{1.0, 1.04, 0.1}, Case{1.0, 0.96, 0.3}}) {
    CAPTURE(c.fin);
    CAPTURE(c.fout);
    CAPTURE(c.f);
    const std::size_t n = static_cast<std::size_t>(20 * c.fin / std::min(c.f, 5.0) * 3);
    const auto x = testutil::sine(n, c.f, c.fin, 1.0, 0.3);
    const auto y = dsp::resample(x, c.fin, c.fout);
    // compare with the analytic tone at the output instants
    double worst = 0;
    for (std::size_t i = 64; i + 64 < y.size(); ++i) {
      const double t = static_cast<double>(i) / c.fout;
      worst = std::max(worst, std::abs(y[i] - std::sin(2 * M_PI * c.f * t + 0.3)));
    }
    CHECK(worst < 0.01);
    const auto [amp, phase] = project(y, c.f, c.fout, 64);
    CHECK(std::abs(amp - 1.0) < 0.01);
  }
}

TEST_CASE("resampling preserves the mean of a DC-free signal") {
  std::vector<double> x(3000);
  for (std::size_t i = 0; i < x.size(); ++i)
    x[i] = std::sin(2 * M_PI * 3.0 * i / 300.0) + 0.5 * std::sin(2 * M_PI * 17.0 * i / 300.0);
  const auto y = dsp::resample(x, 300.0, 200.0);
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  CHECK(std::abs(mean) < 1e-3);
}

TEST_CASE("training scale and per-signal standardization") {
  const std::vector<std::vector<double>> two{{1, -1, 1, -1}, {3, -3, 3, -3}};
  CHECK(dsp::training_scale(two).value == doctest::Approx(2.0));
  CHECK(dsp::training_scale(two).provenance == dsp::ScaleProvenance::TrainingSetMean);
  const std::vector<std::vector<double>> one{{1, -1, 1, -1}};
  CHECK(dsp::training_scale(one).value == 1.0);

  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> d(-50, 50);
  std::vector<std::vector<double>> many(100);
  for (auto& r : many) {
    r.resize(10 + gen() % 200);
    for (auto& v : r) v = d(gen);
  }
  double oracle = 0;
  for (const auto& r : many) {
    double m = 0;
    for (double v : r) m += v;
    m /= static_cast<double>(r.size());
    double ss = 0;
    for (double v : r) ss += (v - m) * (v - m);
    oracle += std::sqrt(ss / static_cast<double>(r.size()));
  }
  oracle /= 100.0;
  const double got = dsp::training_scale(many).value;
  CHECK(std::abs(got - oracle) <= 1e-12 * oracle);
  std::shuffle(many.begin(), many.end(), gen);
  CHECK(std::abs(dsp::training_scale(many).value - got) <= 1e-12 * got);

  CHECK(error_code_of([] { dsp::training_scale(std::vector<std::vector<double>>{}); }) == Errc::EmptyInput);
  CHECK(error_code_of([] { dsp::training_scale(std::vector<std::vector<double>>{{2, 2}, {1, 1, 1}}); }) ==
        Errc::ZeroVariance);

  CHECK(dsp::standardize_per_signal(std::vector<double>{2, -2, 2, -2}) == std::vector<double>{1, -1, 1, -1});
  std::vector<double> r(500), r3(500);
  for (std::size_t i = 0; i < r.size(); ++i) {
    r[i] = d(gen);
    r3[i] = 3.7 * r[i];
  }
  const auto s1 = dsp::standardize_per_signal(r);
  const auto s3 = dsp::standardize_per_signal(r3);
  CHECK(std::abs(dsp::population_std(s1) - 1.0) < 1e-9);
  for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(s1[i] - s3[i]) < 1e-12);
  CHECK(error_code_of([] { dsp::standardize_per_signal(std::vector<double>{0, 0, 0}); }) == Errc::ZeroVariance);
}

TEST_CASE("front end and cache tag") {
  const auto x = testutil::sine(9000, 10.0, 300.0, 100.0);
  const auto y = dsp::preprocess(x, 300.0, {});
  CHECK(y.size() == 6000);
  dsp::PreprocessConfig other;
  other.high_cut = 35.0;
  CHECK(dsp::preprocess_tag({}) == dsp::preprocess_tag({}));
  CHECK(dsp::preprocess_tag({}) != dsp::preprocess_tag(other));
}

}
