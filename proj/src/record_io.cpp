#include "ecgcrnn/record_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "ecgcrnn/error.hpp"
#include "ecgcrnn/rng.hpp"

namespace ecgcrnn {

namespace {

std::uint32_t read_u32le(std::span<const std::byte> b, std::size_t at) {
  return static_cast<std::uint32_t>(b[at]) | (static_cast<std::uint32_t>(b[at + 1]) << 8) |
         (static_cast<std::uint32_t>(b[at + 2]) << 16) |
         (static_cast<std::uint32_t>(b[at + 3]) << 24);
}

template <typename T>
T load_le(const std::byte* p) {
  // Host is assumed little-endian (x86-64 / aarch64); MAT-4 payloads written
  // on big-endian machines are rejected before we get here.
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

std::size_t precision_width(std::uint32_t digit) {
  switch (digit) {
    case 0: return 8;  // f64
    case 1: return 4;  // f32
    case 2: return 4;  // i32
    case 3: return 2;  // i16
    case 4: return 2;  // u16
    case 5: return 1;  // u8
    default: return 0;
  }
}

double decode_value(std::uint32_t digit, const std::byte* p) {
  switch (digit) {
    case 0: return load_le<double>(p);
    case 1: return static_cast<double>(load_le<float>(p));
    case 2: return static_cast<double>(load_le<std::int32_t>(p));
    case 3: return static_cast<double>(load_le<std::int16_t>(p));
    case 4: return static_cast<double>(load_le<std::uint16_t>(p));
    default: return static_cast<double>(static_cast<std::uint8_t>(*p));
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

RhythmClass class_at(std::size_t index) {
  if (index >= kNumClasses) throw Error(Errc::BadLabel, "class index " + std::to_string(index));
  return static_cast<RhythmClass>(index);
}

char class_token(RhythmClass c) noexcept {
  switch (c) {
    case RhythmClass::NormalRhythm: return 'N';
    case RhythmClass::AtrialFibrillation: return 'A';
    case RhythmClass::OtherRhythm: return 'O';
    case RhythmClass::Noise: return '~';
  }
  return '?';
}

std::optional<RhythmClass> class_from_token(std::string_view token) noexcept {
  if (token == "N") return RhythmClass::NormalRhythm;
  if (token == "A") return RhythmClass::AtrialFibrillation;
  if (token == "O") return RhythmClass::OtherRhythm;
  if (token == "~") return RhythmClass::Noise;
  return std::nullopt;
}

std::string_view class_name(RhythmClass c) noexcept {
  switch (c) {
    case RhythmClass::NormalRhythm: return "Normal rhythm";
    case RhythmClass::AtrialFibrillation: return "Atrial fibrillation";
    case RhythmClass::OtherRhythm: return "Other rhythm";
    case RhythmClass::Noise: return "Noise";
  }
  return "?";
}

std::string_view split_part_name(SplitPart part) noexcept {
  switch (part) {
    case SplitPart::Train: return "train";
    case SplitPart::Test: return "test";
    case SplitPart::Validation: return "val";
  }
  return "?";
}

void validate_record(const EcgRecord& record) {
  if (record.samples.empty()) throw Error(Errc::BadRecord, "record '" + record.id + "' has no samples");
  if (!(record.fs > 0.0) || !std::isfinite(record.fs))
    throw Error(Errc::BadRecord, "record '" + record.id + "' has non-positive sampling rate");
}

Mat4Matrix parse_mat4_matrix(std::span<const std::byte> bytes) {
  constexpr std::size_t kHeader = 20;
  if (bytes.size() < kHeader)
    throw Error(Errc::TruncatedFile, "MAT-4 header needs 20 bytes, got " + std::to_string(bytes.size()));

  const std::uint32_t type = read_u32le(bytes, 0);
  const std::uint32_t rows = read_u32le(bytes, 4);
  const std::uint32_t cols = read_u32le(bytes, 8);
  const std::uint32_t imag = read_u32le(bytes, 12);
  const std::uint32_t name_len = read_u32le(bytes, 16);

  // MOPT: M = byte order, O = reserved, P = precision, T = matrix kind.
  const std::uint32_t m = (type / 1000) % 10;
  const std::uint32_t o = (type / 100) % 10;
  const std::uint32_t p = (type / 10) % 10;
  const std::uint32_t t = type % 10;
  if (type >= 10000 || m != 0)
    throw Error(Errc::UnsupportedType, "only little-endian IEEE MAT-4 data is supported (type " +
                                           std::to_string(type) + ")");
  if (o != 0 || t != 0)
    throw Error(Errc::UnsupportedType, "only full numeric matrices are supported (type " +
                                           std::to_string(type) + ")");
  const std::size_t width = precision_width(p);
  if (width == 0) throw Error(Errc::UnsupportedType, "precision digit " + std::to_string(p));
  if (imag != 0) throw Error(Errc::UnsupportedType, "complex matrices are not supported");
  if (name_len == 0) throw Error(Errc::BadName, "empty matrix name");

  if (bytes.size() < kHeader + static_cast<std::size_t>(name_len))
    throw Error(Errc::TruncatedFile, "file ends inside the matrix name");
  const auto* name_begin = reinterpret_cast<const char*>(bytes.data() + kHeader);
  if (name_begin[name_len - 1] != '\0')
    throw Error(Errc::BadName, "matrix name is not NUL-terminated within its declared length");

  Mat4Matrix out;
  out.name.assign(name_begin, std::strlen(name_begin));
  out.rows = rows;
  out.cols = cols;

  const std::size_t count = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
  const std::size_t data_at = kHeader + name_len;
  if (count > (bytes.size() - data_at) / width)
    throw Error(Errc::TruncatedFile, "header declares " + std::to_string(count) + " values but only " +
                                         std::to_string((bytes.size() - data_at) / width) +
                                         " are present");
  out.values.resize(count);
  const std::byte* src = bytes.data() + data_at;
  for (std::size_t i = 0; i < count; ++i) out.values[i] = decode_value(p, src + i * width);
  return out;
}

std::vector<double> parse_mat4(std::span<const std::byte> bytes) {
  return parse_mat4_matrix(bytes).values;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::Io, "cannot open " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

EcgRecord load_mat_record(const std::filesystem::path& path, double fs,
                          std::optional<RhythmClass> label) {
  const auto bytes = read_file_bytes(path);
  EcgRecord rec;
  rec.id = path.stem().string();
  rec.fs = fs;
  rec.samples = parse_mat4(bytes);
  rec.label = label;
  validate_record(rec);
  return rec;
}

DatasetManifest load_manifest(std::string_view text) {
  DatasetManifest manifest;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;

    const std::size_t comma = line.find(',');
    if (comma == std::string_view::npos || line.find(',', comma + 1) != std::string_view::npos)
      throw Error(Errc::BadLabel, "line " + std::to_string(line_no) + ": expected 'id,label'");
    const std::string_view id = trim(line.substr(0, comma));
    const std::string_view token = trim(line.substr(comma + 1));
    const auto label = class_from_token(token);
    if (!label)
      throw Error(Errc::BadLabel, "line " + std::to_string(line_no) + ": unknown label '" +
                                      std::string(token) + "'");
    if (id.empty()) throw Error(Errc::BadLabel, "line " + std::to_string(line_no) + ": empty id");
    if (!seen.emplace(id).second)
      throw Error(Errc::DuplicateId, "line " + std::to_string(line_no) + ": '" + std::string(id) + "'");
    manifest.entries.push_back({std::string(id), *label});
  }
  return manifest;
}

DatasetManifest load_manifest_dir(const std::filesystem::path& dataset_dir) {
  const auto ref = dataset_dir / "REFERENCE.csv";
  const auto bytes = read_file_bytes(ref);
  DatasetManifest m = load_manifest(
      std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  m.source_dir = dataset_dir;
  return m;
}

ClassBreakdown class_breakdown(const DatasetManifest& manifest) {
  if (manifest.entries.empty()) throw Error(Errc::EmptyManifest, "class breakdown of an empty manifest");
  ClassBreakdown out{};
  for (const auto& e : manifest.entries) ++out[index_of(e.label)].count;
  const double total = static_cast<double>(manifest.entries.size());
  for (auto& share : out) share.proportion = static_cast<double>(share.count) / total;
  return out;
}

namespace {

// Adjust per-class quotas by `residual` units, one unit at a time, always
// choosing the largest class that can still absorb the change.
void distribute_residual(std::array<long long, kNumClasses>& quota,
                         const std::array<std::size_t, kNumClasses>& size, long long residual) {
  std::array<std::size_t, kNumClasses> order{};
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return size[a] > size[b]; });
  while (residual != 0) {
    const int step = residual > 0 ? 1 : -1;
    bool moved = false;
    for (std::size_t k : order) {
      const long long next = quota[k] + step;
      if (next >= 0 && next <= static_cast<long long>(size[k])) {
        quota[k] = next;
        residual -= step;
        moved = true;
        break;
      }
    }
    if (!moved) throw Error(Errc::BadSize, "cannot reach the requested split size");
  }
}

std::array<long long, kNumClasses> class_quotas(const std::array<std::size_t, kNumClasses>& size,
                                                std::size_t total, std::size_t want) {
  std::array<long long, kNumClasses> quota{};
  long long assigned = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const double share = static_cast<double>(size[k]) / static_cast<double>(total);
    quota[k] = std::llround(static_cast<double>(want) * share);
    assigned += quota[k];
  }
  distribute_residual(quota, size, static_cast<long long>(want) - assigned);
  return quota;
}

}  // namespace

SplitAssignment stratified_split(const DatasetManifest& manifest, std::size_t train_size,
                                 std::uint64_t seed, std::size_t validation_size) {
  const std::size_t n = manifest.entries.size();
  if (train_size == 0 || train_size + validation_size >= n)
    throw Error(Errc::BadSize, "train size " + std::to_string(train_size) + " (+" +
                                   std::to_string(validation_size) + " validation) for " +
                                   std::to_string(n) + " records");

  std::array<std::vector<std::size_t>, kNumClasses> members;
  for (std::size_t i = 0; i < n; ++i) members[index_of(manifest.entries[i].label)].push_back(i);
  std::array<std::size_t, kNumClasses> size{};
  for (std::size_t k = 0; k < kNumClasses; ++k) size[k] = members[k].size();

  const auto train_quota = class_quotas(size, n, train_size);
  std::array<long long, kNumClasses> val_quota{};
  if (validation_size > 0) {
    std::array<std::size_t, kNumClasses> left{};
    for (std::size_t k = 0; k < kNumClasses; ++k) left[k] = size[k] - static_cast<std::size_t>(train_quota[k]);
    val_quota = class_quotas(left, n - train_size, validation_size);
  }

  std::vector<SplitPart> part(n, SplitPart::Test);
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    auto& ids = members[k];
    Rng rng = Rng::derive(seed, {0x5350u, k});
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng.uniform_int(i - 1)]);
    const auto nt = static_cast<std::size_t>(train_quota[k]);
    const auto nv = static_cast<std::size_t>(val_quota[k]);
    for (std::size_t j = 0; j < ids.size(); ++j) {
      if (j < nt) part[ids[j]] = SplitPart::Train;
      else if (j < nt + nv) part[ids[j]] = SplitPart::Validation;
    }
  }

  SplitAssignment out;
  out.seed = seed;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& id = manifest.entries[i].id;
    switch (part[i]) {
      case SplitPart::Train: out.train.push_back(id); break;
      case SplitPart::Test: out.test.push_back(id); break;
      case SplitPart::Validation: out.validation.push_back(id); break;
    }
  }
  return out;
}

std::string format_split(const DatasetManifest& manifest, const SplitAssignment& split) {
  std::unordered_map<std::string, SplitPart> where;
  for (const auto& id : split.train) where[id] = SplitPart::Train;
  for (const auto& id : split.test) where[id] = SplitPart::Test;
  for (const auto& id : split.validation) where[id] = SplitPart::Validation;
  std::string out;
  for (const auto& e : manifest.entries) {
    const auto it = where.find(e.id);
    if (it == where.end()) throw Error(Errc::BadSize, "record '" + e.id + "' missing from split");
    out += e.id;
    out += '\t';
    out += split_part_name(it->second);
    out += '\n';
  }
  return out;
}

SplitAssignment parse_split(std::string_view text) {
  SplitAssignment out;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos)
      throw Error(Errc::BadSize, "split line " + std::to_string(line_no) + ": expected 'id<TAB>part'");
    std::string id(line.substr(0, tab));
    const std::string_view part = line.substr(tab + 1);
    if (!seen.insert(id).second) throw Error(Errc::DuplicateId, "split line " + std::to_string(line_no));
    if (part == "train") out.train.push_back(std::move(id));
    else if (part == "test") out.test.push_back(std::move(id));
    else if (part == "val") out.validation.push_back(std::move(id));
    else throw Error(Errc::BadSize, "split line " + std::to_string(line_no) + ": unknown part");
  }
  return out;
}

DatasetManifest subset(const DatasetManifest& manifest, std::span<const std::string> ids) {
  std::unordered_set<std::string> keep(ids.begin(), ids.end());
  DatasetManifest out;
  out.source_dir = manifest.source_dir;
  for (const auto& e : manifest.entries)
    if (keep.count(e.id)) out.entries.push_back(e);
  return out;
}

}  // namespace ecgcrnn
