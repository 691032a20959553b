/*
 * sim_clock.hpp
 *
 * Copyright 2026 The homelink authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <stdexcept>
#include <string>

namespace homelink {

/// Simulated milliseconds since the clock's epoch.
using SimMillis = std::int64_t;

/// 2024-01-01T00:00:00Z
inline constexpr std::int64_t kDefaultEpochUnixMs = 1704067200000;

/// Logical clock owned by the gateway. Manual mode only moves when told to;
/// realtime mode tracks the steady clock 1:1 from construction.
class SimClock {
 public:
  enum class Mode { kManual, kRealtime };

  explicit SimClock(Mode mode = Mode::kManual, std::int64_t epoch_unix_ms = kDefaultEpochUnixMs)
      : mode_(mode), epoch_unix_ms_(epoch_unix_ms), origin_(std::chrono::steady_clock::now()) {}

  Mode mode() const { return mode_; }

  SimMillis now() const {
    if (mode_ == Mode::kRealtime) {
      return std::chrono::duration_cast<std::chrono::milliseconds>(
                 std::chrono::steady_clock::now() - origin_)
                 .count() + offset_.load();
    }
    return manual_.load();
  }

  /// Manual mode: moves forward to t. Going backwards is an error.
  void advance_to(SimMillis t) {
    if (mode_ != Mode::kManual) throw std::logic_error("advance_to on a realtime clock");
    SimMillis cur = manual_.load();
    if (t < cur) throw std::invalid_argument("simulated time cannot go backwards");
    manual_.store(t);
  }

  void advance_by(SimMillis d) { advance_to(now() + d); }

  /// Realtime mode: continue from a recovered timestamp.
  void resume_from(SimMillis t) {
    if (mode_ == Mode::kManual) {
      if (t > manual_.load()) manual_.store(t);
    } else {
      offset_.store(t);
      origin_ = std::chrono::steady_clock::now();
    }
  }

  std::int64_t epoch_unix_ms() const { return epoch_unix_ms_; }

  /// UTC, millisecond precision, e.g. 2024-01-01T00:00:01.250Z.
  std::string iso8601(SimMillis t) const {
    const std::int64_t unix_ms = epoch_unix_ms_ + t;
    std::time_t secs = static_cast<std::time_t>(unix_ms / 1000);
    int ms = static_cast<int>(unix_ms % 1000);
    if (ms < 0) {
      ms += 1000;
      --secs;
    }
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, ms);
    return buf;
  }

 private:
  Mode mode_;
  std::int64_t epoch_unix_ms_;
  std::chrono::steady_clock::time_point origin_;
  std::atomic<SimMillis> manual_{0};
  std::atomic<SimMillis> offset_{0};
};

}  // namespace homelink
