/*
 * wireproto.hpp
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
 * @file wireproto.hpp
 * @brief Framed binary protocol spoken over the serial Bluetooth stream.
 *
 * Frame format (before stuffing):
 *   0x7E | VERSION | DEVICE_CLASS | OPCODE | LEN | PAYLOAD[LEN] | CHECKSUM
 *
 * CHECKSUM is the XOR of every body byte from VERSION through the payload.
 * Inside the body 0x7E is sent as 0x7D 0x5E and 0x7D as 0x7D 0x5D. The SOF
 * byte itself is never stuffed. Frames are length-delimited; there is no end
 * marker.
 */

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

namespace homelink::wire {

inline constexpr std::uint8_t kSof = 0x7E;
inline constexpr std::uint8_t kEsc = 0x7D;
inline constexpr std::uint8_t kEscXor = 0x20;
inline constexpr std::uint8_t kVersion = 0x01;
inline constexpr std::size_t kMaxPayload = 64;
inline constexpr std::size_t kMaxSecret = 16;
inline constexpr std::size_t kHeaderSize = 4;  // version, class, opcode, len

enum class DeviceClass : std::uint8_t {
  kEntry = 0x01,
  kAutomation = 0x02,
  kCar = 0x03,
};

inline constexpr bool is_device_class(std::uint8_t b) { return b >= 0x01 && b <= 0x03; }

inline std::string_view device_class_name(DeviceClass c) {
  switch (c) {
    case DeviceClass::kEntry: return "entry";
    case DeviceClass::kAutomation: return "automation";
    case DeviceClass::kCar: return "car";
  }
  return "?";
}

namespace op {
inline constexpr std::uint8_t kAuth = 0x10;
inline constexpr std::uint8_t kLock = 0x11;
inline constexpr std::uint8_t kUnlock = 0x12;
inline constexpr std::uint8_t kLightSet = 0x20;
inline constexpr std::uint8_t kFanSet = 0x21;
inline constexpr std::uint8_t kFanStep = 0x22;
inline constexpr std::uint8_t kTempQuery = 0x30;
inline constexpr std::uint8_t kStatusQuery = 0x31;
inline constexpr std::uint8_t kResetAuth = 0x40;

inline constexpr std::uint8_t kAck = 0x80;
inline constexpr std::uint8_t kNack = 0x81;
inline constexpr std::uint8_t kCollapsed = 0x82;
inline constexpr std::uint8_t kTempReport = 0x90;
inline constexpr std::uint8_t kStatusReport = 0x91;
}  // namespace op

/// Nack reason codes carried in the single payload byte of a Nack.
enum class NackReason : std::uint8_t {
  kUnauthorized = 0x01,
  kBadArg = 0x02,
  kFanOff = 0x03,
  kBusy = 0x04,
  kWrongPassword = 0x05,
  kUnsupported = 0x06,
  kMalformed = 0x07,
};

inline std::string_view nack_reason_name(NackReason r) {
  switch (r) {
    case NackReason::kUnauthorized: return "unauthorized";
    case NackReason::kBadArg: return "bad-arg";
    case NackReason::kFanOff: return "fan-off";
    case NackReason::kBusy: return "busy";
    case NackReason::kWrongPassword: return "wrong-password";
    case NackReason::kUnsupported: return "unsupported";
    case NackReason::kMalformed: return "malformed";
  }
  return "unknown";
}

/// Lock state byte of a StatusReport.
enum class LockState : std::uint8_t {
  kNone = 0,
  kLocked = 1,
  kUnlocked = 2,
  kMovingToLocked = 3,
  kMovingToUnlocked = 4,
};

// ---------------------------------------------------------------------------
// Commands (controller -> device)
// ---------------------------------------------------------------------------

struct Auth {
  std::string password;
  bool operator==(const Auth&) const = default;
};
struct Lock {
  bool operator==(const Lock&) const = default;
};
struct Unlock {
  bool operator==(const Unlock&) const = default;
};
struct LightSet {
  std::uint8_t light_id = 1;
  bool on = false;
  bool operator==(const LightSet&) const = default;
};
struct FanSet {
  bool on = false;
  bool operator==(const FanSet&) const = default;
};
struct FanStep {
  std::int8_t delta = 1;
  bool operator==(const FanStep&) const = default;
};
struct TempQuery {
  bool operator==(const TempQuery&) const = default;
};
struct StatusQuery {
  bool operator==(const StatusQuery&) const = default;
};
struct ResetAuth {
  std::string code;
  bool operator==(const ResetAuth&) const = default;
};

using Command = std::variant<Auth, Lock, Unlock, LightSet, FanSet, FanStep, TempQuery,
                             StatusQuery, ResetAuth>;

// ---------------------------------------------------------------------------
// Responses (device -> controller)
// ---------------------------------------------------------------------------

struct Ack {
  bool operator==(const Ack&) const = default;
};
struct Nack {
  NackReason reason = NackReason::kBadArg;
  bool operator==(const Nack&) const = default;
};
struct Collapsed {
  bool operator==(const Collapsed&) const = default;
};
/// Raw sensor register, 1/16 degC per count.
struct TempReport {
  std::int16_t raw = 0;
  bool operator==(const TempReport&) const = default;
  double celsius() const { return raw * 0.0625; }
};
struct StatusReport {
  bool light1 = false;
  bool light2 = false;
  bool fan_on = false;
  std::uint8_t fan_level = 0;
  LockState lock_state = LockState::kNone;
  bool operator==(const StatusReport&) const = default;
};

using Response = std::variant<Ack, Nack, Collapsed, TempReport, StatusReport>;

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

struct Frame {
  std::uint8_t version = kVersion;
  DeviceClass device_class = DeviceClass::kEntry;
  std::uint8_t opcode = 0;
  std::vector<std::uint8_t> payload;
  std::uint8_t checksum = 0;
  bool operator==(const Frame&) const = default;
};

class EncodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a checksum-valid frame does not carry a well-formed message.
class MessageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// XOR fold with initial value 0x00.
inline std::uint8_t checksum(std::span<const std::uint8_t> body) {
  std::uint8_t acc = 0x00;
  for (std::uint8_t b : body) acc ^= b;
  return acc;
}

inline bool is_printable(std::uint8_t b) { return b >= 0x20 && b <= 0x7E; }

inline bool is_printable(std::string_view s) {
  for (char c : s) {
    if (!is_printable(static_cast<std::uint8_t>(c))) return false;
  }
  return true;
}

inline bool is_command_opcode(std::uint8_t opcode) {
  switch (opcode) {
    case op::kAuth: case op::kLock: case op::kUnlock: case op::kLightSet:
    case op::kFanSet: case op::kFanStep: case op::kTempQuery: case op::kStatusQuery:
    case op::kResetAuth:
      return true;
    default:
      return false;
  }
}

inline bool is_response_opcode(std::uint8_t opcode) {
  switch (opcode) {
    case op::kAck: case op::kNack: case op::kCollapsed: case op::kTempReport:
    case op::kStatusReport:
      return true;
    default:
      return false;
  }
}

/// Whether a payload of length `len` is admissible for `opcode`. Unknown
/// opcodes admit nothing.
inline bool length_fits_opcode(std::uint8_t opcode, std::size_t len) {
  switch (opcode) {
    case op::kLock: case op::kUnlock: case op::kTempQuery: case op::kStatusQuery:
    case op::kAck: case op::kCollapsed:
      return len == 0;
    case op::kFanSet: case op::kFanStep: case op::kNack:
      return len == 1;
    case op::kLightSet: case op::kTempReport:
      return len == 2;
    case op::kStatusReport:
      return len == 3;
    case op::kAuth: case op::kResetAuth:
      return len <= kMaxSecret;
    default:
      return false;
  }
}

inline std::uint8_t opcode_of(const Command& cmd) {
  constexpr std::uint8_t table[] = {op::kAuth,      op::kLock,       op::kUnlock,
                                    op::kLightSet,  op::kFanSet,     op::kFanStep,
                                    op::kTempQuery, op::kStatusQuery, op::kResetAuth};
  return table[cmd.index()];
}

inline std::uint8_t opcode_of(const Response& rsp) {
  constexpr std::uint8_t table[] = {op::kAck, op::kNack, op::kCollapsed, op::kTempReport,
                                    op::kStatusReport};
  return table[rsp.index()];
}

namespace detail {

inline std::vector<std::uint8_t> secret_bytes(std::string_view s, std::string_view what) {
  if (s.size() > kMaxSecret) {
    throw EncodeError(std::string(what) + " longer than 16 characters");
  }
  if (!is_printable(s)) throw EncodeError(std::string(what) + " must be printable ASCII");
  return {s.begin(), s.end()};
}

inline std::string secret_string(std::span<const std::uint8_t> payload) {
  for (std::uint8_t b : payload) {
    if (!is_printable(b)) throw MessageError("secret payload not printable");
  }
  return {payload.begin(), payload.end()};
}

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

}  // namespace detail

inline std::vector<std::uint8_t> payload_of(const Command& cmd) {
  return std::visit(
      detail::overloaded{
          [](const Auth& c) { return detail::secret_bytes(c.password, "password"); },
          [](const ResetAuth& c) { return detail::secret_bytes(c.code, "reset code"); },
          [](const LightSet& c) {
            return std::vector<std::uint8_t>{c.light_id, static_cast<std::uint8_t>(c.on)};
          },
          [](const FanSet& c) { return std::vector<std::uint8_t>{static_cast<std::uint8_t>(c.on)}; },
          [](const FanStep& c) {
            return std::vector<std::uint8_t>{static_cast<std::uint8_t>(c.delta)};
          },
          [](const auto&) { return std::vector<std::uint8_t>{}; },
      },
      cmd);
}

inline std::vector<std::uint8_t> payload_of(const Response& rsp) {
  return std::visit(
      detail::overloaded{
          [](const Nack& r) { return std::vector<std::uint8_t>{static_cast<std::uint8_t>(r.reason)}; },
          [](const TempReport& r) {
            auto u = static_cast<std::uint16_t>(r.raw);
            return std::vector<std::uint8_t>{static_cast<std::uint8_t>(u >> 8),
                                             static_cast<std::uint8_t>(u & 0xFF)};
          },
          [](const StatusReport& r) {
            std::uint8_t flags = static_cast<std::uint8_t>((r.light1 ? 0x01 : 0) |
                                                           (r.light2 ? 0x02 : 0) |
                                                           (r.fan_on ? 0x04 : 0));
            return std::vector<std::uint8_t>{flags, r.fan_level,
                                             static_cast<std::uint8_t>(r.lock_state)};
          },
          [](const auto&) { return std::vector<std::uint8_t>{}; },
      },
      rsp);
}

/// Unstuffed body bytes: version, class, opcode, len, payload, checksum.
inline std::vector<std::uint8_t> frame_body(const Frame& f) {
  std::vector<std::uint8_t> body;
  body.reserve(kHeaderSize + f.payload.size() + 1);
  body.push_back(f.version);
  body.push_back(static_cast<std::uint8_t>(f.device_class));
  body.push_back(f.opcode);
  body.push_back(static_cast<std::uint8_t>(f.payload.size()));
  body.insert(body.end(), f.payload.begin(), f.payload.end());
  body.push_back(f.checksum);
  return body;
}

inline Frame make_frame(DeviceClass device_class, std::uint8_t opcode,
                        std::vector<std::uint8_t> payload) {
  if (payload.size() > kMaxPayload) throw EncodeError("payload exceeds 64 bytes");
  Frame f;
  f.device_class = device_class;
  f.opcode = opcode;
  f.payload = std::move(payload);
  auto body = frame_body(f);
  f.checksum = checksum(std::span(body).first(body.size() - 1));
  return f;
}

/// SOF followed by the stuffed body.
inline std::vector<std::uint8_t> encode(const Frame& f) {
  if (f.payload.size() > kMaxPayload) throw EncodeError("payload exceeds 64 bytes");
  std::vector<std::uint8_t> out;
  out.reserve(2 + 2 * (kHeaderSize + f.payload.size() + 1));
  out.push_back(kSof);
  for (std::uint8_t b : frame_body(f)) {
    if (b == kSof || b == kEsc) {
      out.push_back(kEsc);
      out.push_back(b ^ kEscXor);
    } else {
      out.push_back(b);
    }
  }
  return out;
}

inline std::vector<std::uint8_t> encode_frame(const Command& cmd, DeviceClass device_class) {
  return encode(make_frame(device_class, opcode_of(cmd), payload_of(cmd)));
}

inline std::vector<std::uint8_t> encode_frame(const Response& rsp, DeviceClass device_class) {
  return encode(make_frame(device_class, opcode_of(rsp), payload_of(rsp)));
}

inline Command parse_command(const Frame& f) {
  const auto& p = f.payload;
  if (!length_fits_opcode(f.opcode, p.size())) throw MessageError("bad payload length");
  auto flag = [](std::uint8_t b) {
    if (b > 1) throw MessageError("boolean byte out of range");
    return b == 1;
  };
  switch (f.opcode) {
    case op::kAuth: return Auth{detail::secret_string(p)};
    case op::kLock: return Lock{};
    case op::kUnlock: return Unlock{};
    case op::kLightSet: return LightSet{p[0], flag(p[1])};
    case op::kFanSet: return FanSet{flag(p[0])};
    case op::kFanStep: return FanStep{static_cast<std::int8_t>(p[0])};
    case op::kTempQuery: return TempQuery{};
    case op::kStatusQuery: return StatusQuery{};
    case op::kResetAuth: return ResetAuth{detail::secret_string(p)};
    default: throw MessageError("not a command opcode");
  }
}

inline Response parse_response(const Frame& f) {
  const auto& p = f.payload;
  if (!length_fits_opcode(f.opcode, p.size())) throw MessageError("bad payload length");
  switch (f.opcode) {
    case op::kAck: return Ack{};
    case op::kNack:
      if (p[0] < 0x01 || p[0] > 0x07) throw MessageError("unknown nack reason");
      return Nack{static_cast<NackReason>(p[0])};
    case op::kCollapsed: return Collapsed{};
    case op::kTempReport:
      return TempReport{static_cast<std::int16_t>(static_cast<std::uint16_t>(p[0] << 8 | p[1]))};
    case op::kStatusReport: {
      if (p[0] & 0xF8) throw MessageError("unknown status flag bits");
      if (p[2] > static_cast<std::uint8_t>(LockState::kMovingToUnlocked)) {
        throw MessageError("unknown lock state");
      }
      return StatusReport{(p[0] & 0x01) != 0, (p[0] & 0x02) != 0, (p[0] & 0x04) != 0, p[1],
                          static_cast<LockState>(p[2])};
    }
    default: throw MessageError("not a response opcode");
  }
}

// ---------------------------------------------------------------------------
// Incremental decoder
// ---------------------------------------------------------------------------

enum class DecodeError : std::uint8_t {
  kChecksumMismatch,
  kBadStuffing,
  kOversize,
  /// Version, device class, opcode or length inconsistent with the opcode table.
  kBadHeader,
  /// A raw SOF arrived before the current body was complete.
  kTruncated,
};

inline std::string_view decode_error_name(DecodeError e) {
  switch (e) {
    case DecodeError::kChecksumMismatch: return "checksum-mismatch";
    case DecodeError::kBadStuffing: return "bad-stuffing";
    case DecodeError::kOversize: return "oversize";
    case DecodeError::kBadHeader: return "bad-header";
    case DecodeError::kTruncated: return "truncated";
  }
  return "?";
}

using DecodeItem = std::variant<Frame, DecodeError>;

/// Byte-at-a-time frame decoder. One instance per connection.
///
/// Garbage outside a frame is skipped silently. Any error drops the partial
/// body and hunts for the next SOF, leaving the decoder in the same state as a
/// fresh instance.
class Decoder {
 public:
  enum class Phase : std::uint8_t { kHunt, kBody };

  std::vector<DecodeItem> feed(std::span<const std::uint8_t> bytes) {
    std::vector<DecodeItem> out;
    for (std::uint8_t b : bytes) step(b, out);
    return out;
  }

  /// Reports an error if the stream ends inside a frame body, then resets.
  std::vector<DecodeItem> finish() {
    std::vector<DecodeItem> out;
    if (phase_ == Phase::kBody) {
      out.emplace_back(DecodeError::kTruncated);
      reset();
    }
    return out;
  }

  void reset() {
    phase_ = Phase::kHunt;
    escaped_ = false;
    body_.clear();
  }

  Phase phase() const { return phase_; }
  bool operator==(const Decoder&) const = default;

 private:
  void step(std::uint8_t b, std::vector<DecodeItem>& out) {
    if (b == kSof) {
      if (phase_ == Phase::kBody) out.emplace_back(DecodeError::kTruncated);
      reset();
      phase_ = Phase::kBody;
      return;
    }
    if (phase_ == Phase::kHunt) return;
    if (escaped_) {
      escaped_ = false;
      if (b != (kSof ^ kEscXor) && b != (kEsc ^ kEscXor)) {
        fail(DecodeError::kBadStuffing, out);
        return;
      }
      accept(b ^ kEscXor, out);
      return;
    }
    if (b == kEsc) {
      escaped_ = true;
      return;
    }
    accept(b, out);
  }

  void accept(std::uint8_t b, std::vector<DecodeItem>& out) {
    body_.push_back(b);
    const std::size_t n = body_.size();
    if (n == 1 && b != kVersion) return fail(DecodeError::kBadHeader, out);
    if (n == 2 && !is_device_class(b)) return fail(DecodeError::kBadHeader, out);
    if (n == 3 && !is_command_opcode(b) && !is_response_opcode(b)) {
      return fail(DecodeError::kBadHeader, out);
    }
    if (n == 4) {
      if (b > kMaxPayload) return fail(DecodeError::kOversize, out);
      if (!length_fits_opcode(body_[2], b)) return fail(DecodeError::kBadHeader, out);
    }
    if (n < kHeaderSize) return;
    const std::size_t expected = kHeaderSize + body_[3] + 1;
    if (n < expected) return;

    const std::uint8_t want = checksum(std::span(body_).first(n - 1));
    if (want != body_.back()) return fail(DecodeError::kChecksumMismatch, out);
    Frame f;
    f.version = body_[0];
    f.device_class = static_cast<DeviceClass>(body_[1]);
    f.opcode = body_[2];
    f.payload.assign(body_.begin() + kHeaderSize, body_.end() - 1);
    f.checksum = body_.back();
    out.emplace_back(std::move(f));
    reset();
  }

  void fail(DecodeError e, std::vector<DecodeItem>& out) {
    out.emplace_back(e);
    reset();
  }

  Phase phase_ = Phase::kHunt;
  bool escaped_ = false;
  std::vector<std::uint8_t> body_;
};

inline std::string hex(std::span<const std::uint8_t> bytes) {
  static constexpr char digits[] = "0123456789ABCDEF";
  std::string s;
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (i) s.push_back(' ');
    s.push_back(digits[bytes[i] >> 4]);
    s.push_back(digits[bytes[i] & 0x0F]);
  }
  return s;
}

/// Short operator-facing name, e.g. "light_set".
inline std::string_view command_name(const Command& cmd) {
  constexpr std::string_view names[] = {"auth",      "lock",      "unlock",
                                        "light_set", "fan_set",   "fan_step",
                                        "temp_query", "status_query", "reset_auth"};
  return names[cmd.index()];
}

inline std::string_view response_name(const Response& rsp) {
  constexpr std::string_view names[] = {"ack", "nack", "collapsed", "temp_report",
                                        "status_report"};
  return names[rsp.index()];
}

}  // namespace homelink::wire
