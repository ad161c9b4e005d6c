#include "ecgcrnn/log.hpp"

#include <atomic>
#include <iostream>
#include <cstdlib>
#include <mutex>
#include <string>

namespace ecgcrnn::log {

namespace {

Level level_from_env() {
  const char* env = std::getenv("ECGCRNN_LOG");
  if (env == nullptr) return Level::Info;
  const std::string v(env);
  if (v == "debug") return Level::Debug;
  if (v == "warn") return Level::Warn;
  if (v == "error") return Level::Error;
  if (v == "off") return Level::Off;
  return Level::Info;
}

std::atomic<Level>& threshold() {
  static std::atomic<Level> t{level_from_env()};
  return t;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

const char* tag(Level l) {
  switch (l) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
    case Level::Off: break;
  }
  return "";
}

}  // namespace

void set_level(Level l) { threshold().store(l); }
Level level() { return threshold().load(); }

void write(Level l, std::string_view message) {
  if (l < threshold().load() || l == Level::Off) return;
  std::lock_guard lock(sink_mutex());
  std::cerr << "[ecgcrnn " << tag(l) << "] " << message << "\n";
}

}  // namespace ecgcrnn::log
