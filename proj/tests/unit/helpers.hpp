#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "ecgcrnn/error.hpp"

namespace testutil {

// Test-only MAT-4 writer. precision digit: 0 f64, 1 f32, 2 i32, 3 i16, 4 u16, 5 u8.
inline std::vector<std::byte> write_mat4(const std::string& name, std::uint32_t rows, std::uint32_t cols,
                                         const std::vector<double>& values, int precision = 3,
                                         std::uint32_t type_override = 0xFFFFFFFFu) {
  std::vector<std::byte> out;
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xFF));
  };
  auto raw = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    out.insert(out.end(), b, b + n);
  };
  u32(type_override != 0xFFFFFFFFu ? type_override : static_cast<std::uint32_t>(precision * 10));
  u32(rows);
  u32(cols);
  u32(0);
  u32(static_cast<std::uint32_t>(name.size() + 1));
  raw(name.c_str(), name.size() + 1);
  for (double v : values) {
    switch (precision) {
      case 0: raw(&v, 8); break;
      case 1: { float f = static_cast<float>(v); raw(&f, 4); break; }
      case 2: { std::int32_t x = static_cast<std::int32_t>(v); raw(&x, 4); break; }
      case 3: { std::int16_t x = static_cast<std::int16_t>(v); raw(&x, 2); break; }
      case 4: { std::uint16_t x = static_cast<std::uint16_t>(v); raw(&x, 2); break; }
      case 5: { std::uint8_t x = static_cast<std::uint8_t>(v); raw(&x, 1); break; }
    }
  }
  return out;
}

inline std::vector<std::byte> from_hex(const std::string& hex) {
  std::vector<std::byte> out;
  for (std::size_t i = 0; i + 1 < hex.size(); i += 2)
    out.push_back(static_cast<std::byte>(std::stoi(hex.substr(i, 2), nullptr, 16)));
  return out;
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::byte>& b) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("ecgcrnn_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
};

template <typename Fn>
ecgcrnn::Errc error_code_of(Fn&& fn) {
  try {
    fn();
  } catch (const ecgcrnn::Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected an ecgcrnn::Error");
}

inline std::vector<double> sine(std::size_t n, double freq, double fs, double amp = 1.0, double phase = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * M_PI * freq * static_cast<double>(i) / fs + phase);
  return x;
}

}  // namespace testutil
