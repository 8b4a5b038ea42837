/* Copyright 2026 The realabel Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

// Structured logging: one JSON object per line on stderr.

#include <atomic>
#include <cstdio>
#include <mutex>
#include <string_view>

#include <json.hpp>

namespace realabel::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

inline std::atomic<Level>& threshold() {
  static std::atomic<Level> level{Level::Info};
  return level;
}

inline void set_level(Level level) { threshold().store(level); }

inline const char* level_name(Level level) {
  switch (level) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warn: return "warn";
    case Level::Error: return "error";
    case Level::Off: break;
  }
  return "off";
}

inline void emit(Level level, std::string_view event, nlohmann::ordered_json fields = {}) {
  if (level < threshold().load()) return;
  nlohmann::ordered_json line;
  line["level"] = level_name(level);
  line["event"] = event;
  if (fields.is_object()) {
    for (auto& [key, value] : fields.items()) line[key] = value;
  }
  static std::mutex mu;
  std::lock_guard lock(mu);
  std::fprintf(stderr, "%s\n", line.dump().c_str());
}

inline void info(std::string_view event, nlohmann::ordered_json fields = {}) {
  emit(Level::Info, event, std::move(fields));
}
inline void warn(std::string_view event, nlohmann::ordered_json fields = {}) {
  emit(Level::Warn, event, std::move(fields));
}
inline void debug(std::string_view event, nlohmann::ordered_json fields = {}) {
  emit(Level::Debug, event, std::move(fields));
}

}  // namespace realabel::log
