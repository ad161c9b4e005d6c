#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <set>

#include "ecgcrnn/record_io.hpp"
#include "helpers.hpp"

using namespace ecgcrnn;
using testutil::error_code_of;

namespace {

DatasetManifest synthetic_manifest(std::array<std::size_t, 4> counts) {
  DatasetManifest m;
  std::size_t id = 1;
  // interleave classes so manifest order is not class order
  std::array<std::size_t, 4> left = counts;
  while (std::accumulate(left.begin(), left.end(), std::size_t{0}) > 0) {
    for (std::size_t k = 0; k < 4; ++k) {
      if (left[k] == 0) continue;
      --left[k];
      char buf[16];
      std::snprintf(buf, sizeof buf, "A%05zu", id++);
      m.entries.push_back({buf, class_at(k)});
    }
  }
  return m;
}

}  // namespace

TEST_SUITE("record_io") {

TEST_CASE("int16 1x3 val matrix matches bytes written by an independent MAT writer") {
  // scipy.io.savemat(format='4') of np.array([[100, -50, 7]], dtype=np.int16) named "val"
  const auto bytes = testutil::from_hex("1e0000000100000003000000000000000400000076616c006400ceff0700");
  const auto m = parse_mat4_matrix(bytes);
  CHECK(m.name == "val");
  CHECK(m.rows == 1);
  CHECK(m.cols == 3);
  CHECK(m.values == std::vector<double>{100.0, -50.0, 7.0});
  CHECK(testutil::write_mat4("val", 1, 3, {100, -50, 7}) == bytes);
}

TEST_CASE("zero columns parse to an empty sequence that records reject") {
  const auto bytes = testutil::write_mat4("val", 1, 0, {});
  CHECK(parse_mat4(bytes).empty());
  EcgRecord r{"A1", 300.0, parse_mat4(bytes), std::nullopt};
  CHECK(error_code_of([&] { validate_record(r); }) == Errc::BadRecord);
}

TEST_CASE("truncation and unsupported headers") {
  const auto full = testutil::write_mat4("val", 1, 3, {1, 2, 3});
  std::vector<std::byte> head(full.begin(), full.begin() + 12);
  CHECK(error_code_of([&] { parse_mat4(head); }) == Errc::TruncatedFile);
  std::vector<std::byte> short_data(full.begin(), full.end() - 1);
  CHECK(error_code_of([&] { parse_mat4(short_data); }) == Errc::TruncatedFile);

  CHECK(error_code_of([&] { parse_mat4(testutil::write_mat4("val", 1, 1, {1}, 3, 1030)); }) ==
        Errc::UnsupportedType);  // big-endian
  CHECK(error_code_of([&] { parse_mat4(testutil::write_mat4("val", 1, 1, {1}, 3, 60)); }) ==
        Errc::UnsupportedType);  // precision digit 6
  CHECK(error_code_of([&] { parse_mat4(testutil::write_mat4("val", 1, 1, {1}, 3, 31)); }) ==
        Errc::UnsupportedType);  // text matrix

  auto complex = full;
  complex[12] = std::byte{1};
  CHECK(error_code_of([&] { parse_mat4(complex); }) == Errc::UnsupportedType);

  auto unterminated = full;
  unterminated[23] = std::byte{'x'};
  CHECK(error_code_of([&] { parse_mat4(unterminated); }) == Errc::BadName);
}

TEST_CASE("every precision round-trips random matrices exactly") {
  std::mt19937 gen(7);
  struct P {
    int digit;
    double lo, hi;
    bool integral;
  };
  for (const P p : {P{0, -1e6, 1e6, false}, P{1, -1e3, 1e3, false}, P{2, -2e9, 2e9, true},
                    P{3, -32768, 32767, true}, P{4, 0, 65535, true}, P{5, 0, 255, true}}) {
    std::uniform_real_distribution<double> d(p.lo, p.hi);
    const std::uint32_t rows = 1 + gen() % 3, cols = 1 + gen() % 50;
    std::vector<double> v(rows * cols);
    for (auto& x : v) {
      x = d(gen);
      if (p.integral) x = std::round(x);
      if (p.digit == 1) x = static_cast<double>(static_cast<float>(x));
    }
    CAPTURE(p.digit);
    const auto m = parse_mat4_matrix(testutil::write_mat4("val", rows, cols, v, p.digit));
    CHECK(m.values == v);
  }
}

TEST_CASE("manifest parsing") {
  const auto m = load_manifest("A00001,N\nA00004,A\n");
  REQUIRE(m.entries.size() == 2);
  CHECK(m.entries[0].id == "A00001");
  CHECK(m.entries[0].label == RhythmClass::NormalRhythm);
  CHECK(m.entries[1].label == RhythmClass::AtrialFibrillation);
  CHECK(load_manifest("").entries.empty());
  CHECK(load_manifest("a,O\r\nb,~").entries[1].label == RhythmClass::Noise);

  try {
    load_manifest("A00001,X");
    FAIL("expected BadLabel");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::BadLabel);
    CHECK(std::string(e.what()).find("line 1") != std::string::npos);
  }
  CHECK(error_code_of([] { load_manifest("a,N\nb,A\na,O\n"); }) == Errc::DuplicateId);
}

TEST_CASE("class breakdown") {
  const auto full = class_breakdown(synthetic_manifest({5076, 758, 2415, 279}));
  CHECK(full[0].count == 5076);
  CHECK(full[1].count == 758);
  CHECK(full[2].count == 2415);
  CHECK(full[3].count == 279);
  CHECK(std::abs(full[0].proportion * 100 - 59.52) < 0.005);
  CHECK(std::abs(full[1].proportion * 100 - 8.89) < 0.005);
  CHECK(std::abs(full[2].proportion * 100 - 28.32) < 0.005);
  CHECK(std::abs(full[3].proportion * 100 - 3.27) < 0.005);
  double sum = 0;
  for (const auto& s : full) sum += s.proportion;
  CHECK(std::abs(sum - 1.0) < 1e-9);

  const auto noise = class_breakdown(synthetic_manifest({0, 0, 0, 1}));
  CHECK(noise[3].count == 1);
  CHECK(noise[3].proportion == 1.0);
  const auto half = class_breakdown(synthetic_manifest({2, 2, 0, 0}));
  CHECK(half[0].proportion == 0.5);
  CHECK(half[1].proportion == 0.5);
  CHECK(error_code_of([] { class_breakdown(DatasetManifest{}); }) == Errc::EmptyManifest);
}

TEST_CASE("stratified split of the full challenge composition") {
  const auto m = synthetic_manifest({5076, 758, 2415, 279});
  const auto split = stratified_split(m, 7000, 42);
  CHECK(split.train.size() == 7000);
  CHECK(split.test.size() == 1528);

  // per-class quotas: round(7000 * count / 8528)
  const auto train_b = class_breakdown(subset(m, split.train));
  CHECK(train_b[0].count == 4167);
  CHECK(train_b[1].count == 622);
  CHECK(train_b[2].count == 1982);
  CHECK(train_b[3].count == 229);

  const auto full_b = class_breakdown(m);
  const auto test_b = class_breakdown(subset(m, split.test));
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(std::abs(train_b[k].proportion - full_b[k].proportion) < 0.005);
    CHECK(std::abs(test_b[k].proportion - full_b[k].proportion) < 0.005);
  }

  std::multiset<std::string> all(split.train.begin(), split.train.end());
  all.insert(split.test.begin(), split.test.end());
  CHECK(all.size() == m.entries.size());
  std::set<std::string> uniq(all.begin(), all.end());
  CHECK(uniq.size() == m.entries.size());
}

TEST_CASE("small splits stay stratified and deterministic") {
  const auto m = synthetic_manifest({1, 1, 1, 1});
  for (std::uint64_t seed : {0u, 1u, 99u}) {
    const auto s = stratified_split(m, 2, seed);
    CHECK(s.train.size() == 2);
    CHECK(s.test.size() == 2);
    const auto b = class_breakdown(subset(m, s.train));
    for (const auto& c : b) CHECK(c.count <= 1);
  }
  const auto big = synthetic_manifest({50, 20, 30, 5});
  CHECK(format_split(big, stratified_split(big, 60, 5)) == format_split(big, stratified_split(big, 60, 5)));
  CHECK(format_split(big, stratified_split(big, 60, 5)) != format_split(big, stratified_split(big, 60, 6)));
  CHECK(error_code_of([&] { stratified_split(big, 0, 1); }) == Errc::BadSize);
  CHECK(error_code_of([&] { stratified_split(big, 105, 1); }) == Errc::BadSize);
}

TEST_CASE("validation part and split file round trip") {
  const auto m = synthetic_manifest({40, 10, 20, 6});
  const auto s = stratified_split(m, 50, 3, 10);
  CHECK(s.train.size() == 50);
  CHECK(s.validation.size() == 10);
  CHECK(s.test.size() == 16);
  const std::string text = format_split(m, s);
  CHECK(text.find("\ttrain\n") != std::string::npos);
  CHECK(text.find("\tval\n") != std::string::npos);
  CHECK(text.find('\r') == std::string::npos);
  const auto back = parse_split(text);
  CHECK(format_split(m, back) == text);
}

TEST_CASE("load a record directory") {
  testutil::TempDir dir("recio");
  testutil::write_bytes(dir.path / "A00001.mat", testutil::write_mat4("val", 1, 4, {1, -2, 3, -4}));
  std::ofstream(dir.path / "REFERENCE.csv") << "A00001,N\n";
  const auto m = load_manifest_dir(dir.path);
  REQUIRE(m.entries.size() == 1);
  const auto r = load_mat_record(dir.path / "A00001.mat", 300.0, m.entries[0].label);
  CHECK(r.id == "A00001");
  CHECK(r.fs == 300.0);
  CHECK(r.samples == std::vector<double>{1, -2, 3, -4});
  CHECK(error_code_of([&] { load_mat_record(dir.path / "missing.mat", 300.0); }) == Errc::Io);
}

}
