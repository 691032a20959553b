/*
 * secmodel.hpp
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
 * @file secmodel.hpp
 * @brief Credentials, three-strike lockout, and the collapse alert path.
 *
 * Every device that takes passwords owns one SecurityModel. Three consecutive
 * wrong passwords, across all of that device's purposes, collapse it: the
 * alarm comes on and two SMS alerts (owner, police) go out through the
 * simulated GSM modem in the same step. Only the authorized reset code
 * re-arms a collapsed device.
 */

#pragma once

#include <sodium.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "homelink/sim_clock.hpp"

namespace homelink::sec {

inline constexpr std::string_view kInvalidLogin = "Invalid User Name or Password";
inline constexpr int kAttemptLimit = 3;
inline constexpr std::string_view kDefaultSmsTemplate =
    "SECURITY ALERT: {device} lockdown at {time} after 3 failed attempts.";

enum class Purpose { kDoorBtEnable, kDoorLock, kCarLock, kCarUnlock };

inline std::string_view purpose_name(Purpose p) {
  switch (p) {
    case Purpose::kDoorBtEnable: return "door_bt_enable";
    case Purpose::kDoorLock: return "door_lock";
    case Purpose::kCarLock: return "car_lock";
    case Purpose::kCarUnlock: return "car_unlock";
  }
  return "?";
}

class ProtocolViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// ---------------------------------------------------------------------------
// Digests
// ---------------------------------------------------------------------------

namespace detail {
inline void ensure_sodium() {
  static const int rc = sodium_init();
  if (rc < 0) throw std::runtime_error("libsodium initialisation failed");
}

inline std::string to_hex(std::span<const std::uint8_t> bytes) {
  std::string out(bytes.size() * 2 + 1, '\0');
  sodium_bin2hex(out.data(), out.size(), bytes.data(), bytes.size());
  out.pop_back();
  return out;
}

template <std::size_t N>
std::array<std::uint8_t, N> from_hex(std::string_view hex) {
  std::array<std::uint8_t, N> out{};
  std::size_t len = 0;
  if (sodium_hex2bin(out.data(), N, hex.data(), hex.size(), nullptr, &len, nullptr) != 0 ||
      len != N) {
    throw std::invalid_argument("bad hex digest field");
  }
  return out;
}
}  // namespace detail

/// Salted one-way digest: BLAKE2b-256 of the secret keyed by a random
/// 16-byte salt. Plaintext is never retained.
struct Digest {
  std::array<std::uint8_t, 16> salt{};
  std::array<std::uint8_t, 32> hash{};

  static Digest make(std::string_view secret) {
    detail::ensure_sodium();
    Digest d;
    randombytes_buf(d.salt.data(), d.salt.size());
    d.hash = compute(d.salt, secret);
    return d;
  }

  bool verify(std::string_view candidate) const {
    auto h = compute(salt, candidate);
    return sodium_memcmp(h.data(), hash.data(), hash.size()) == 0;
  }

  nlohmann::json to_json() const {
    return {{"salt", detail::to_hex(salt)}, {"digest", detail::to_hex(hash)}};
  }

  static Digest from_json(const nlohmann::json& j) {
    Digest d;
    d.salt = detail::from_hex<16>(j.at("salt").get<std::string>());
    d.hash = detail::from_hex<32>(j.at("digest").get<std::string>());
    return d;
  }

 private:
  static std::array<std::uint8_t, 32> compute(const std::array<std::uint8_t, 16>& salt,
                                              std::string_view secret) {
    detail::ensure_sodium();
    std::array<std::uint8_t, 32> out{};
    crypto_generichash(out.data(), out.size(),
                       reinterpret_cast<const unsigned char*>(secret.data()), secret.size(),
                       salt.data(), salt.size());
    return out;
  }
};

struct LoginResult {
  bool ok = false;
  std::string message;
};

class CredentialStore {
 public:
  void set_app_login(std::string username, std::string_view password) {
    app_user_ = std::move(username);
    app_password_ = Digest::make(password);
  }
  void set_app_login(std::string username, Digest password) {
    app_user_ = std::move(username);
    app_password_ = password;
  }
  void set_device_password(Purpose p, std::string_view password) {
    device_[p] = Digest::make(password);
  }
  void set_device_password(Purpose p, Digest d) { device_[p] = d; }
  void set_reset_code(std::string_view code) { reset_ = Digest::make(code); }
  void set_reset_code(Digest d) { reset_ = d; }

  /// Wrong password and unknown user yield the same result, and both run a
  /// digest comparison.
  LoginResult verify_app_login(std::string_view username, std::string_view password) const {
    const bool pw_ok = app_password_.verify(password);
    const bool user_ok = sodium_memcmp_strings(username, app_user_);
    if (pw_ok && user_ok) return {true, ""};
    return {false, std::string(kInvalidLogin)};
  }

  /// False for a wrong password and for a purpose with no configured secret.
  bool verify(Purpose p, std::string_view candidate) const {
    auto it = device_.find(p);
    if (it == device_.end()) {
      unknown_.verify(candidate);
      return false;
    }
    return it->second.verify(candidate);
  }

  bool verify_reset(std::string_view code) const { return reset_.verify(code); }

 private:
  static bool sodium_memcmp_strings(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    return a.empty() || sodium_memcmp(a.data(), b.data(), a.size()) == 0;
  }

  std::string app_user_;
  Digest app_password_ = Digest::make("");
  std::map<Purpose, Digest> device_;
  Digest reset_ = Digest::make("");
  Digest unknown_ = Digest::make("");
};

// ---------------------------------------------------------------------------
// SMS outbox and GSM modem
// ---------------------------------------------------------------------------

struct SmsMessage {
  std::string recipient;
  std::string body;
  std::string sent_at;
  std::string device;
  bool operator==(const SmsMessage&) const = default;

  nlohmann::json to_json() const {
    return {{"recipient", recipient}, {"body", body}, {"sent_at", sent_at}, {"device", device}};
  }
};

/// Append-only list of every alert handed to the modem, one JSON object per
/// line in sms_outbox.jsonl when a path is given.
class Outbox {
 public:
  Outbox() = default;
  explicit Outbox(std::filesystem::path path) : path_(std::move(path)) {}

  void append(const SmsMessage& msg) {
    std::lock_guard lk(mu_);
    if (path_) {
      std::ofstream out(*path_, std::ios::app);
      out << msg.to_json().dump() << '\n';
      out.flush();
      if (!out) throw std::runtime_error("cannot persist outbox to " + path_->string());
    }
    messages_.push_back(msg);
  }

  std::vector<SmsMessage> messages() const {
    std::lock_guard lk(mu_);
    return messages_;
  }

  std::size_t size() const {
    std::lock_guard lk(mu_);
    return messages_.size();
  }

 private:
  mutable std::mutex mu_;
  std::optional<std::filesystem::path> path_;
  std::vector<SmsMessage> messages_;
};

/// Text-mode AT exchange written to gsm_transcript.log. No radio is involved.
class GsmModem {
 public:
  GsmModem() = default;
  explicit GsmModem(std::filesystem::path transcript) : path_(std::move(transcript)) {}

  /// Makes the next `n` sends fail, for exercising the retry path.
  void fail_next_sends(int n) {
    std::lock_guard lk(mu_);
    fail_budget_ = n;
  }

  bool send(const SmsMessage& msg) {
    std::lock_guard lk(mu_);
    std::vector<std::string> lines{
        "AT+CMGF=1",
        "OK",
        "AT+CMGS=\"" + msg.recipient + "\"",
        "> " + msg.body + "<CTRL-Z>",
    };
    if (fail_budget_ > 0) {
      --fail_budget_;
      lines.push_back("+CMS ERROR: 38");
      write_locked(lines);
      return false;
    }
    lines.push_back("+CMGS: " + std::to_string(++message_ref_));
    lines.push_back("OK");
    return write_locked(lines);
  }

  std::vector<std::string> transcript() const {
    std::lock_guard lk(mu_);
    return transcript_;
  }

 private:
  bool write_locked(const std::vector<std::string>& lines) {
    transcript_.insert(transcript_.end(), lines.begin(), lines.end());
    if (!path_) return true;
    std::ofstream out(*path_, std::ios::app);
    for (const auto& l : lines) out << l << '\n';
    out.flush();
    return static_cast<bool>(out);
  }

  mutable std::mutex mu_;
  std::optional<std::filesystem::path> path_;
  std::vector<std::string> transcript_;
  int fail_budget_ = 0;
  int message_ref_ = 0;
};

struct AlertRecipients {
  std::string owner;
  std::string police;
};

/// What the security model reports to its owner, synchronously, as part of
/// the transition that caused it.
struct SecurityNotice {
  enum class Kind { kCollapse, kAlarmOn, kSms, kDeliveryFailed, kAlarmOff, kRearmed };
  Kind kind = Kind::kCollapse;
  std::string device;
  SimMillis at = 0;
  std::optional<SmsMessage> sms;
};

inline std::string_view notice_name(SecurityNotice::Kind k) {
  switch (k) {
    case SecurityNotice::Kind::kCollapse: return "collapse";
    case SecurityNotice::Kind::kAlarmOn: return "alarm_on";
    case SecurityNotice::Kind::kSms: return "sms";
    case SecurityNotice::Kind::kDeliveryFailed: return "delivery_failed";
    case SecurityNotice::Kind::kAlarmOff: return "alarm_off";
    case SecurityNotice::Kind::kRearmed: return "rearmed";
  }
  return "?";
}

/// Outbox, modem and recipients shared by every device's security model.
struct AlertChannel {
  AlertRecipients recipients;
  std::string sms_template{kDefaultSmsTemplate};
  std::shared_ptr<Outbox> outbox = std::make_shared<Outbox>();
  std::shared_ptr<GsmModem> modem = std::make_shared<GsmModem>();
};

inline std::string render_sms(std::string_view tmpl, std::string_view device,
                              std::string_view time) {
  std::string out(tmpl);
  auto replace = [&](std::string_view key, std::string_view value) {
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos)) {
      out.replace(pos, key.size(), value);
      pos += value.size();
    }
  };
  replace("{device}", device);
  replace("{time}", time);
  return out;
}

// ---------------------------------------------------------------------------
// Per-device lockout state machine
// ---------------------------------------------------------------------------

struct Armed {
  int failures = 0;
  bool operator==(const Armed&) const = default;
};

struct CollapseEvent {
  std::string device;
  SimMillis at = 0;
  bool operator==(const CollapseEvent&) const = default;
};

enum class VerifyOutcome {
  kOk,
  kFail,
  /// This attempt was the third consecutive failure.
  kCollapsedNow,
  /// Already collapsed; nothing was checked or counted.
  kCollapsed,
};

enum class ResetOutcome { kRearmed, kStillCollapsed, kAlreadyArmed };

/// Serializable view of a SecurityModel.
struct SecurityState {
  bool collapsed = false;
  int failures = 0;
  bool alarm_active = false;
  SimMillis collapsed_since = 0;
  bool operator==(const SecurityState&) const = default;

  nlohmann::json to_json() const {
    nlohmann::json j{{"state", collapsed ? "collapsed" : "armed"},
                     {"failures", failures},
                     {"alarm", alarm_active}};
    if (collapsed) j["since"] = collapsed_since;
    return j;
  }

  static SecurityState from_json(const nlohmann::json& j) {
    SecurityState s;
    s.collapsed = j.at("state").get<std::string>() == "collapsed";
    s.failures = j.at("failures").get<int>();
    s.alarm_active = j.at("alarm").get<bool>();
    s.collapsed_since = j.value("since", SimMillis{0});
    return s;
  }
};

class SecurityModel {
 public:
  using Listener = std::function<void(const SecurityNotice&)>;

  SecurityModel(std::string device, std::shared_ptr<const CredentialStore> credentials,
                std::shared_ptr<AlertChannel> alerts, const SimClock* clock,
                std::set<Purpose> purposes)
      : device_(std::move(device)),
        credentials_(std::move(credentials)),
        alerts_(std::move(alerts)),
        clock_(clock),
        purposes_(std::move(purposes)) {}

  void set_listener(Listener l) { listener_ = std::move(l); }

  const std::string& device() const { return device_; }
  bool collapsed() const { return collapsed_; }
  bool alarm_active() const { return collapsed_; }
  int failures() const { return failures_; }

  SecurityState state() const {
    return {collapsed_, failures_, collapsed_, collapsed_ ? since_ : 0};
  }

  void restore(const SecurityState& s) {
    collapsed_ = s.collapsed;
    failures_ = s.collapsed ? 0 : s.failures;
    since_ = s.collapsed_since;
  }

  VerifyOutcome verify_device_password(Purpose purpose, std::string_view candidate) {
    return verify_any({purpose}, candidate, nullptr);
  }

  /// One attempt checked against several purposes; counts at most once.
  VerifyOutcome verify_any(std::initializer_list<Purpose> purposes, std::string_view candidate,
                           Purpose* matched) {
    if (collapsed_) return VerifyOutcome::kCollapsed;
    for (Purpose p : purposes) {
      if (purposes_.count(p) && credentials_->verify(p, candidate)) {
        failures_ = 0;
        if (matched) *matched = p;
        return VerifyOutcome::kOk;
      }
    }
    auto r = record_failure();
    return std::holds_alternative<CollapseEvent>(r) ? VerifyOutcome::kCollapsedNow
                                                    : VerifyOutcome::kFail;
  }

  std::variant<Armed, CollapseEvent> record_failure() {
    if (collapsed_) throw ProtocolViolation("record_failure while collapsed");
    if (failures_ + 1 < kAttemptLimit) return Armed{++failures_};

    collapsed_ = true;
    failures_ = 0;
    since_ = clock_ ? clock_->now() : 0;
    CollapseEvent ev{device_, since_};
    notify(SecurityNotice::Kind::kCollapse);
    notify(SecurityNotice::Kind::kAlarmOn);
    dispatch_collapse_alerts(ev);
    return ev;
  }

  /// Appends exactly two messages (owner, police) and pushes each through
  /// the modem, retrying a failed send once.
  std::vector<SmsMessage> dispatch_collapse_alerts(const CollapseEvent& ev) {
    const std::string when = clock_ ? clock_->iso8601(ev.at) : std::to_string(ev.at);
    const std::string body = render_sms(alerts_->sms_template, ev.device, when);
    std::vector<SmsMessage> sent;
    for (const auto& to : {alerts_->recipients.owner, alerts_->recipients.police}) {
      SmsMessage msg{to, body, when, ev.device};
      alerts_->outbox->append(msg);
      notify(SecurityNotice::Kind::kSms, msg);
      if (!alerts_->modem->send(msg) && !alerts_->modem->send(msg)) {
        notify(SecurityNotice::Kind::kDeliveryFailed, msg);
      }
      sent.push_back(std::move(msg));
    }
    return sent;
  }

  /// Wrong codes never count toward any strike counter.
  ResetOutcome authorized_reset(std::string_view code) {
    if (!collapsed_) return ResetOutcome::kAlreadyArmed;
    if (!credentials_->verify_reset(code)) return ResetOutcome::kStillCollapsed;
    collapsed_ = false;
    failures_ = 0;
    since_ = 0;
    notify(SecurityNotice::Kind::kAlarmOff);
    notify(SecurityNotice::Kind::kRearmed);
    return ResetOutcome::kRearmed;
  }

 private:
  void notify(SecurityNotice::Kind kind, std::optional<SmsMessage> sms = std::nullopt) {
    if (!listener_) return;
    listener_(SecurityNotice{kind, device_, clock_ ? clock_->now() : 0, std::move(sms)});
  }

  std::string device_;
  std::shared_ptr<const CredentialStore> credentials_;
  std::shared_ptr<AlertChannel> alerts_;
  const SimClock* clock_;
  std::set<Purpose> purposes_;
  Listener listener_;
  bool collapsed_ = false;
  int failures_ = 0;
  SimMillis since_ = 0;
};

}  // namespace homelink::sec
