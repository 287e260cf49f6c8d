#pragma once

#include <chrono>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace ltmvo::log {

/// Line-delimited structured records on stderr: timestamp, level, then
/// key=value pairs. Metrics and reports go to stdout or files, never here.
inline std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      now.time_since_epoch()) %
                  1000;
  char buf[32];
  std::tm tm_utc;
  gmtime_r(&t, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%S", &tm_utc);
  char out[40];
  std::snprintf(out, sizeof(out), "%s.%03dZ", buf, static_cast<int>(ms.count()));
  return out;
}

struct KV {
  std::string key;
  std::string value;
  KV(std::string k, const std::string& v) : key(std::move(k)), value(v) {}
  KV(std::string k, const char* v) : key(std::move(k)), value(v) {}
  template <typename T>
  KV(std::string k, T v) : key(std::move(k)) {
    std::ostringstream os;
    os.precision(10);
    os << v;
    value = os.str();
  }
};

inline void emit(const char* level, const std::vector<KV>& kvs) {
  std::ostringstream os;
  os << timestamp() << " " << level;
  for (const auto& kv : kvs) os << " " << kv.key << "=" << kv.value;
  os << "\n";
  std::fputs(os.str().c_str(), stderr);
}

inline void info(const std::vector<KV>& kvs) { emit("INFO", kvs); }
inline void warn(const std::vector<KV>& kvs) { emit("WARN", kvs); }
inline void error(const std::vector<KV>& kvs) { emit("ERROR", kvs); }

}  // namespace ltmvo::log
