/*
 * devices.hpp
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

/**
 * @file devices.hpp
 * @brief The three simulated controllers: entry, automation, car.
 *
 * Controllers are plain state machines. They do no locking and own no
 * threads; the gateway serializes every input (wire command, keypad event,
 * clock tick) for a device onto a single strand.
 */

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "homelink/secmodel.hpp"
#include "homelink/sim_clock.hpp"
#include "homelink/wireproto.hpp"

namespace homelink::dev {

using wire::Command;
using wire::LockState;
using wire::NackReason;
using wire::Response;

inline constexpr int kMaxFanLevel = 5;
inline constexpr std::size_t kKeypadDigits = 16;
inline constexpr double kTempLsb = 0.0625;
inline constexpr double kTempMin = -55.0;
inline constexpr double kTempMax = 125.0;

// ---------------------------------------------------------------------------
// Dimmer and sensor math
// ---------------------------------------------------------------------------

/// Firing angle in radians for a fan level; level 5 conducts the full half-cycle.
inline double fan_level_to_angle(int level) {
  if (level < 0 || level > kMaxFanLevel) throw std::out_of_range("fan level must be 0..5");
  return std::numbers::pi * (1.0 - static_cast<double>(level) / kMaxFanLevel);
}

/// Fraction of full power delivered when the triac fires at alpha.
///
/// Written in terms of the conduction angle beta = pi - alpha; this is the
/// same expression as 1 - a/pi + sin(2a)/(2pi) but lands exactly on 0 and 1
/// at the ends instead of picking up a rounding residue from sin(2pi).
inline double dimmer_power_fraction(double alpha) {
  if (!(alpha >= 0.0 && alpha <= std::numbers::pi)) {
    throw std::out_of_range("firing angle must be in [0, pi]");
  }
  const double beta = std::numbers::pi - alpha;
  const double p = (2.0 * beta - std::sin(2.0 * beta)) / (2.0 * std::numbers::pi);
  return std::clamp(p, 0.0, 1.0);
}

/// Triac firing times in seconds, one per half-cycle, measured from the
/// first zero crossing.
inline std::vector<double> zero_crossing_schedule(double mains_hz, double alpha,
                                                  std::size_t n_half_cycles) {
  if (!(mains_hz > 0.0)) throw std::invalid_argument("mains frequency must be positive");
  std::vector<double> out;
  out.reserve(n_half_cycles);
  const double half = 1.0 / (2.0 * mains_hz);
  const double delay = alpha / (2.0 * std::numbers::pi * mains_hz);
  for (std::size_t k = 0; k < n_half_cycles; ++k) out.push_back(static_cast<double>(k) * half + delay);
  return out;
}

/// 12-bit style digital thermometer: floor quantization to 1/16 degC.
class TempSensor {
 public:
  /// Returns true when the value had to be clamped into the modeled range.
  bool set_ambient(double celsius) {
    if (!std::isfinite(celsius)) throw std::invalid_argument("ambient must be finite");
    ambient_ = celsius;
    return clamped();
  }
  double ambient() const { return ambient_; }
  bool clamped() const { return ambient_ < kTempMin || ambient_ > kTempMax; }

  std::int16_t read() const {
    const double c = std::clamp(ambient_, kTempMin, kTempMax);
    return static_cast<std::int16_t>(std::floor(c * 16.0));
  }

 private:
  double ambient_ = 25.0;
};

// ---------------------------------------------------------------------------
// LCD
// ---------------------------------------------------------------------------

class LcdModel {
 public:
  static constexpr int kRows = 2;
  static constexpr int kCols = 16;

  LcdModel() { clear(); }

  void clear() { rows_.fill(std::string(kCols, ' ')); }
  void clear_row(int row) {
    if (row >= 0 && row < kRows) rows_[row].assign(kCols, ' ');
  }

  /// Anything falling outside the 2x16 grid is dropped.
  void write(int row, int col, std::string_view text) {
    if (row < 0 || row >= kRows) return;
    for (std::size_t i = 0; i < text.size(); ++i) {
      const long c = col + static_cast<long>(i);
      if (c < 0) continue;
      if (c >= kCols) break;
      rows_[row][c] = text[i];
    }
  }

  std::array<std::string, kRows> render() const { return rows_; }

  /// Rows with trailing blanks removed; what logs and tests compare against.
  std::array<std::string, kRows> text() const {
    auto out = rows_;
    for (auto& r : out) r.erase(r.find_last_not_of(' ') + 1);
    return out;
  }

 private:
  std::array<std::string, kRows> rows_;
};

// ---------------------------------------------------------------------------
// Entry security
// ---------------------------------------------------------------------------

enum class DoorState { kLocked, kUnlocked };

inline std::string_view door_state_name(DoorState d) {
  return d == DoorState::kLocked ? "locked" : "unlocked";
}

struct KeypressResult {
  std::array<std::string, LcdModel::kRows> lcd;
  std::optional<sec::VerifyOutcome> submitted;
  bool powered_now = false;  // this key turned the BT module on
};

class EntryController {
 public:
  explicit EntryController(sec::SecurityModel security) : security_(std::move(security)) {
    refresh();
  }

  sec::SecurityModel& security() { return security_; }
  const sec::SecurityModel& security() const { return security_; }

  bool bt_powered() const { return bt_powered_; }
  DoorState door() const { return door_; }
  const LcdModel& lcd() const { return lcd_; }
  std::size_t buffered_digits() const { return buffer_.size(); }
  bool session_authorized() const { return authorized_; }

  KeypressResult keypress(char key) {
    KeypressResult r;
    if (security_.collapsed()) {
      refresh();
      r.lcd = lcd_.render();
      return r;
    }
    denied_ = false;
    if (key >= '0' && key <= '9') {
      if (buffer_.size() == kKeypadDigits) buffer_.erase(buffer_.begin());
      buffer_.push_back(key);
    } else if (key == '*') {
      buffer_.clear();
    } else if (key == '#') {
      auto outcome = security_.verify_device_password(sec::Purpose::kDoorBtEnable, buffer_);
      buffer_.clear();
      r.submitted = outcome;
      if (outcome == sec::VerifyOutcome::kOk) {
        r.powered_now = !bt_powered_;
        bt_powered_ = true;
      } else if (outcome == sec::VerifyOutcome::kFail) {
        denied_ = true;
      }
    } else {
      throw std::invalid_argument(std::string("not a keypad key: ") + key);
    }
    refresh();
    r.lcd = lcd_.render();
    return r;
  }

  Response handle(const Command& cmd) {
    if (const auto* reset = std::get_if<wire::ResetAuth>(&cmd)) return handle_reset(reset->code);
    if (security_.collapsed()) return wire::Collapsed{};

    Response out = std::visit(
        [&](const auto& c) -> Response {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, wire::Auth>) {
            switch (security_.verify_device_password(sec::Purpose::kDoorLock, c.password)) {
              case sec::VerifyOutcome::kOk:
                authorized_ = true;
                return wire::Ack{};
              case sec::VerifyOutcome::kFail: return wire::Nack{NackReason::kWrongPassword};
              default: return wire::Collapsed{};
            }
          } else if constexpr (std::is_same_v<T, wire::Lock> || std::is_same_v<T, wire::Unlock>) {
            if (!authorized_) return wire::Nack{NackReason::kUnauthorized};
            door_ = std::is_same_v<T, wire::Lock> ? DoorState::kLocked : DoorState::kUnlocked;
            return wire::Ack{};
          } else if constexpr (std::is_same_v<T, wire::StatusQuery>) {
            wire::StatusReport s;
            s.lock_state = door_ == DoorState::kLocked ? LockState::kLocked : LockState::kUnlocked;
            return s;
          } else {
            return wire::Nack{NackReason::kUnsupported};
          }
        },
        cmd);
    refresh();
    return out;
  }

  /// Out-of-band reset from the gateway (the authorized person on site).
  sec::ResetOutcome authorized_reset(std::string_view code) {
    auto r = security_.authorized_reset(code);
    if (r == sec::ResetOutcome::kRearmed) buffer_.clear();
    refresh();
    return r;
  }

  /// Authorization lives only as long as the link that earned it.
  void on_link_closed() { authorized_ = false; }

  nlohmann::json snapshot() const {
    auto rows = lcd_.text();
    return {{"bt_powered", bt_powered_},
            {"door", door_state_name(door_)},
            {"lcd", {rows[0], rows[1]}},
            {"security", security_.state().to_json()}};
  }

  void restore(const nlohmann::json& j) {
    bt_powered_ = j.at("bt_powered").get<bool>();
    door_ = j.at("door") == "locked" ? DoorState::kLocked : DoorState::kUnlocked;
    security_.restore(sec::SecurityState::from_json(j.at("security")));
    // The keypad buffer is volatile and never persisted; a denied banner is.
    buffer_.clear();
    authorized_ = false;
    denied_ = j.contains("lcd") && j["lcd"].at(0) == "ACCESS DENIED";
    refresh();
  }

 private:
  Response handle_reset(std::string_view code) {
    auto r = authorized_reset(code);
    if (r == sec::ResetOutcome::kStillCollapsed) return wire::Collapsed{};
    return wire::Ack{};
  }

  void refresh() {
    lcd_.clear();
    if (security_.collapsed()) {
      lcd_.write(0, 0, "SYSTEM LOCKED");
      lcd_.write(1, 0, "ALARM ON");
      return;
    }
    if (denied_) {
      lcd_.write(0, 0, "ACCESS DENIED");
    } else {
      lcd_.write(0, 0, bt_powered_ ? "BT READY" : "ENTER PASSWORD");
    }
    lcd_.write(1, 0, std::string(buffer_.size(), '*'));
  }

  sec::SecurityModel security_;
  LcdModel lcd_;
  std::string buffer_;
  bool bt_powered_ = false;
  bool authorized_ = false;
  bool denied_ = false;
  DoorState door_ = DoorState::kLocked;
};

// ---------------------------------------------------------------------------
// Room automation
// ---------------------------------------------------------------------------

class AutomationController {
 public:
  explicit AutomationController(double mains_hz = 50.0) : mains_hz_(mains_hz) {
    if (!(mains_hz > 0.0)) throw std::invalid_argument("mains frequency must be positive");
  }

  bool light1() const { return light1_; }
  bool light2() const { return light2_; }
  bool fan_on() const { return fan_on_; }
  int fan_level() const { return fan_level_; }
  double mains_hz() const { return mains_hz_; }
  double firing_angle() const { return fan_level_to_angle(fan_level_); }
  double delivered_power() const { return fan_on_ ? dimmer_power_fraction(firing_angle()) : 0.0; }
  std::vector<double> firing_schedule(std::size_t n) const {
    return zero_crossing_schedule(mains_hz_, firing_angle(), n);
  }

  TempSensor& sensor() { return sensor_; }
  const TempSensor& sensor() const { return sensor_; }

  wire::StatusReport status() const {
    return {light1_, light2_, fan_on_, static_cast<std::uint8_t>(fan_level_), LockState::kNone};
  }

  Response handle(const Command& cmd) {
    return std::visit(
        [&](const auto& c) -> Response {
          using T = std::decay_t<decltype(c)>;
          if constexpr (std::is_same_v<T, wire::LightSet>) {
            if (c.light_id == 1) {
              light1_ = c.on;
            } else if (c.light_id == 2) {
              light2_ = c.on;
            } else {
              return wire::Nack{NackReason::kBadArg};
            }
            return wire::Ack{};
          } else if constexpr (std::is_same_v<T, wire::FanSet>) {
            fan_on_ = c.on;
            return wire::Ack{};
          } else if constexpr (std::is_same_v<T, wire::FanStep>) {
            if (c.delta != 1 && c.delta != -1) return wire::Nack{NackReason::kBadArg};
            if (!fan_on_) return wire::Nack{NackReason::kFanOff};
            fan_level_ = std::clamp(fan_level_ + c.delta, 0, kMaxFanLevel);
            return wire::Ack{};
          } else if constexpr (std::is_same_v<T, wire::TempQuery>) {
            return wire::TempReport{sensor_.read()};
          } else if constexpr (std::is_same_v<T, wire::StatusQuery>) {
            return status();
          } else {
            return wire::Nack{NackReason::kUnsupported};
          }
        },
        cmd);
  }

  nlohmann::json snapshot() const {
    return {{"light1", light1_},
            {"light2", light2_},
            {"fan_on", fan_on_},
            {"fan_level", fan_level_},
            {"firing_angle", firing_angle()},
            {"power", delivered_power()},
            {"ambient", sensor_.ambient()},
            {"temp_raw", sensor_.read()}};
  }

  void restore(const nlohmann::json& j) {
    light1_ = j.at("light1").get<bool>();
    light2_ = j.at("light2").get<bool>();
    fan_on_ = j.at("fan_on").get<bool>();
    fan_level_ = std::clamp(j.at("fan_level").get<int>(), 0, kMaxFanLevel);
    sensor_.set_ambient(j.at("ambient").get<double>());
  }

 private:
  double mains_hz_;
  bool light1_ = false;
  bool light2_ = false;
  bool fan_on_ = false;
  int fan_level_ = 3;
  TempSensor sensor_;
};

// ---------------------------------------------------------------------------
// Car lock
// ---------------------------------------------------------------------------

enum class Actuator { kLocked, kUnlocked, kMovingToLocked, kMovingToUnlocked };

inline std::string_view actuator_name(Actuator a) {
  switch (a) {
    case Actuator::kLocked: return "locked";
    case Actuator::kUnlocked: return "unlocked";
    case Actuator::kMovingToLocked: return "moving_to_locked";
    case Actuator::kMovingToUnlocked: return "moving_to_unlocked";
  }
  return "?";
}

inline LockState to_lock_state(Actuator a) {
  switch (a) {
    case Actuator::kLocked: return LockState::kLocked;
    case Actuator::kUnlocked: return LockState::kUnlocked;
    case Actuator::kMovingToLocked: return LockState::kMovingToLocked;
    case Actuator::kMovingToUnlocked: return LockState::kMovingToUnlocked;
  }
  return LockState::kNone;
}

/// One relay edge: both coil states right after the change.
struct RelayEvent {
  SimMillis at = 0;
  bool rl1 = false;
  bool rl2 = false;
  bool operator==(const RelayEvent&) const = default;
};

/// RL1 drives the solenoid forward (lock), RL2 reverse (unlock).
class CarController {
 public:
  using RelayObserver = std::function<void(const RelayEvent&)>;

  CarController(sec::SecurityModel security, SimMillis pulse_ms = 300)
      : security_(std::move(security)), pulse_ms_(pulse_ms) {
    if (pulse_ms <= 0) throw std::invalid_argument("pulse_ms must be positive");
  }

  sec::SecurityModel& security() { return security_; }
  const sec::SecurityModel& security() const { return security_; }

  void set_relay_observer(RelayObserver o) { observer_ = std::move(o); }

  bool rl1() const { return rl1_; }
  bool rl2() const { return rl2_; }
  Actuator actuator() const { return actuator_; }
  SimMillis pulse_ms() const { return pulse_ms_; }
  bool pulse_active() const { return pulse_end_.has_value(); }
  std::optional<SimMillis> pulse_end() const { return pulse_end_; }

  /// Ends a pulse whose time is up. Returns true if anything changed.
  bool tick(SimMillis now) {
    if (!pulse_end_ || now < *pulse_end_) return false;
    const SimMillis end = *pulse_end_;
    pulse_end_.reset();
    rl1_ = rl2_ = false;
    actuator_ = actuator_ == Actuator::kMovingToLocked ? Actuator::kLocked : Actuator::kUnlocked;
    emit(end);
    return true;
  }

  Response handle(const Command& cmd, SimMillis now) {
    tick(now);
    if (const auto* reset = std::get_if<wire::ResetAuth>(&cmd)) {
      auto r = security_.authorized_reset(reset->code);
      if (r == sec::ResetOutcome::kStillCollapsed) return wire::Collapsed{};
      return wire::Ack{};
    }
    if (security_.collapsed()) return wire::Collapsed{};
    if (std::holds_alternative<wire::StatusQuery>(cmd)) {
      wire::StatusReport s;
      s.lock_state = to_lock_state(actuator_);
      return s;
    }
    const auto* auth = std::get_if<wire::Auth>(&cmd);
    if (!auth) return wire::Nack{NackReason::kUnsupported};
    // Checked before the password so a busy reply never costs a strike.
    if (pulse_active()) return wire::Nack{NackReason::kBusy};

    sec::Purpose matched{};
    switch (security_.verify_any({sec::Purpose::kCarLock, sec::Purpose::kCarUnlock},
                                 auth->password, &matched)) {
      case sec::VerifyOutcome::kOk: break;
      case sec::VerifyOutcome::kFail: return wire::Nack{NackReason::kWrongPassword};
      default: return wire::Collapsed{};
    }
    const bool lock = matched == sec::Purpose::kCarLock;
    // Break before make: the idle state has both coils off, so only one
    // coil is ever switched on here.
    rl1_ = lock;
    rl2_ = !lock;
    actuator_ = lock ? Actuator::kMovingToLocked : Actuator::kMovingToUnlocked;
    pulse_end_ = now + pulse_ms_;
    emit(now);
    return wire::Ack{};
  }

  nlohmann::json snapshot() const {
    nlohmann::json j = {{"rl1", rl1_},
                        {"rl2", rl2_},
                        {"actuator", actuator_name(actuator_)},
                        {"security", security_.state().to_json()}};
    j["pulse_end"] = pulse_end_ ? nlohmann::json(*pulse_end_) : nlohmann::json(nullptr);
    return j;
  }

  void restore(const nlohmann::json& j) {
    rl1_ = j.at("rl1").get<bool>();
    rl2_ = j.at("rl2").get<bool>();
    const auto a = j.at("actuator").get<std::string>();
    for (auto v : {Actuator::kLocked, Actuator::kUnlocked, Actuator::kMovingToLocked,
                   Actuator::kMovingToUnlocked}) {
      if (actuator_name(v) == a) actuator_ = v;
    }
    pulse_end_.reset();
    if (j.contains("pulse_end") && !j["pulse_end"].is_null()) {
      pulse_end_ = j["pulse_end"].get<SimMillis>();
    }
    security_.restore(sec::SecurityState::from_json(j.at("security")));
  }

 private:
  void emit(SimMillis at) {
    if (observer_) observer_({at, rl1_, rl2_});
  }

  sec::SecurityModel security_;
  SimMillis pulse_ms_;
  RelayObserver observer_;
  bool rl1_ = false;
  bool rl2_ = false;
  Actuator actuator_ = Actuator::kLocked;
  std::optional<SimMillis> pulse_end_;
};

}  // namespace homelink::dev
