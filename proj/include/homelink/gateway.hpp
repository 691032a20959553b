/*
 * gateway.hpp
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
 * @file gateway.hpp
 * @brief Hosts the radio and the three device simulators; owns sessions.
 *
 * Threading:
 *  - each device has one Strand; every controller call runs there, so a
 *    device sees a single ordered stream of wire commands, keypad events
 *    and clock ticks;
 *  - each device has a link thread that plays the firmware's serial loop:
 *    listen, accept one client, close the server socket, serve until EOF;
 *  - a session holds its own mutex for the whole of one request, so each
 *    client has at most one command in flight.
 *
 * Lock order: session -> gateway -> host. Strand tasks only take the event
 * log lock.
 */

#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "homelink/btlink.hpp"
#include "homelink/config.hpp"
#include "homelink/devices.hpp"
#include "homelink/event_log.hpp"
#include "homelink/secmodel.hpp"
#include "homelink/sim_clock.hpp"
#include "homelink/wireproto.hpp"

namespace homelink::gw {

using namespace std::chrono_literals;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Strand
// ---------------------------------------------------------------------------

/// Single consumer thread over a FIFO of tasks.
class Strand {
 public:
  Strand() : thread_([this] { run(); }) {}
  ~Strand() { stop(); }
  Strand(const Strand&) = delete;
  Strand& operator=(const Strand&) = delete;

  template <class F>
  auto post(F f) -> std::future<std::invoke_result_t<F>> {
    using R = std::invoke_result_t<F>;
    auto task = std::make_shared<std::packaged_task<R()>>(std::move(f));
    auto fut = task->get_future();
    {
      std::lock_guard lk(mu_);
      if (stopped_) throw std::runtime_error("strand stopped");
      queue_.emplace_back([task] { (*task)(); });
    }
    cv_.notify_one();
    return fut;
  }

  /// Must not be called from the strand's own thread.
  template <class F>
  auto run(F f) {
    return post(std::move(f)).get();
  }

  void stop() {
    {
      std::lock_guard lk(mu_);
      if (stopped_) return;
      stopped_ = true;
    }
    cv_.notify_all();
    if (thread_.joinable()) thread_.join();
  }

 private:
  void run() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stopped_ || !queue_.empty(); });
        if (queue_.empty()) return;
        task = std::move(queue_.front());
        queue_.pop_front();
      }
      task();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> queue_;
  bool stopped_ = false;
  std::thread thread_;
};

// ---------------------------------------------------------------------------
// Errors and results
// ---------------------------------------------------------------------------

/// A request the gateway could not carry out. `code` is machine-readable.
class GatewayError : public std::runtime_error {
 public:
  GatewayError(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

enum class AttachResult { kAttached, kBusy, kRefused, kUnreachable, kTimeout };

inline std::string_view attach_result_name(AttachResult r) {
  switch (r) {
    case AttachResult::kAttached: return "attached";
    case AttachResult::kBusy: return "busy";
    case AttachResult::kRefused: return "refused";
    case AttachResult::kUnreachable: return "unreachable";
    case AttachResult::kTimeout: return "timeout";
  }
  return "?";
}

enum class Transport { kRaw, kJson, kLocal };

inline std::string_view transport_name(Transport t) {
  switch (t) {
    case Transport::kRaw: return "raw";
    case Transport::kJson: return "json";
    case Transport::kLocal: return "local";
  }
  return "?";
}

inline std::string_view reset_outcome_name(sec::ResetOutcome r) {
  switch (r) {
    case sec::ResetOutcome::kRearmed: return "rearmed";
    case sec::ResetOutcome::kStillCollapsed: return "still_collapsed";
    case sec::ResetOutcome::kAlreadyArmed: return "already_armed";
  }
  return "?";
}

inline std::string_view fan_toast(std::int8_t delta) {
  return delta > 0 ? "Speed Increasing" : "Speed Decreasing";
}

/// Command as logged: secrets never reach the event log.
inline json command_to_json(const wire::Command& cmd) {
  json j = {{"command", wire::command_name(cmd)}};
  std::visit(
      [&](const auto& c) {
        using T = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<T, wire::LightSet>) {
          j["light"] = c.light_id;
          j["on"] = c.on;
        } else if constexpr (std::is_same_v<T, wire::FanSet>) {
          j["on"] = c.on;
        } else if constexpr (std::is_same_v<T, wire::FanStep>) {
          j["delta"] = c.delta;
        }
      },
      cmd);
  return j;
}

inline std::string_view lock_state_name(wire::LockState s) {
  switch (s) {
    case wire::LockState::kNone: return "none";
    case wire::LockState::kLocked: return "locked";
    case wire::LockState::kUnlocked: return "unlocked";
    case wire::LockState::kMovingToLocked: return "moving_to_locked";
    case wire::LockState::kMovingToUnlocked: return "moving_to_unlocked";
  }
  return "?";
}

inline json response_to_json(const wire::Response& r) {
  json j = {{"response", wire::response_name(r)}};
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, wire::Nack>) {
          j["reason"] = wire::nack_reason_name(v.reason);
        } else if constexpr (std::is_same_v<T, wire::Collapsed>) {
          j["collapsed"] = true;
        } else if constexpr (std::is_same_v<T, wire::TempReport>) {
          j["raw"] = v.raw;
          j["temp_c"] = v.celsius();
        } else if constexpr (std::is_same_v<T, wire::StatusReport>) {
          j["light1"] = v.light1;
          j["light2"] = v.light2;
          j["fan_on"] = v.fan_on;
          j["fan_level"] = v.fan_level;
          j["lock"] = lock_state_name(v.lock_state);
        }
      },
      r);
  return j;
}

// ---------------------------------------------------------------------------
// Device host
// ---------------------------------------------------------------------------

class Gateway;

/// One simulated controller plus its serial link loop.
class DeviceHost {
 public:
  using Controller = std::variant<std::unique_ptr<dev::EntryController>,
                                  std::unique_ptr<dev::AutomationController>,
                                  std::unique_ptr<dev::CarController>>;

  DeviceHost(DeviceEntry entry, bt::Adapter adapter, Controller controller,
             std::function<void(json)> emit, const SimClock* clock, SimMillis temp_conversion_ms)
      : entry_(std::move(entry)),
        adapter_(std::move(adapter)),
        controller_(std::move(controller)),
        emit_(std::move(emit)),
        clock_(clock),
        temp_conversion_ms_(temp_conversion_ms) {}

  ~DeviceHost() { stop(); }

  const DeviceEntry& entry() const { return entry_; }
  std::string name() const { return std::string(wire::device_class_name(entry_.device_class)); }
  bt::Adapter& adapter() { return adapter_; }
  Strand& strand() { return strand_; }

  dev::EntryController* entry_ctl() { return get<dev::EntryController>(); }
  dev::AutomationController* automation_ctl() { return get<dev::AutomationController>(); }
  dev::CarController* car_ctl() { return get<dev::CarController>(); }
  sec::SecurityModel* security() {
    if (auto* e = entry_ctl()) return &e->security();
    if (auto* c = car_ctl()) return &c->security();
    return nullptr;
  }

  /// Runs `f` on the strand, then publishes a state event if the device's
  /// snapshot changed.
  template <class F>
  auto op(F f) {
    return strand_.run([this, f = std::move(f)]() mutable {
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        publish_state();
      } else {
        auto r = f();
        publish_state();
        return r;
      }
    });
  }

  json snapshot_on_strand() const {
    return std::visit([](const auto& c) { return c->snapshot(); }, controller_);
  }

  json snapshot() {
    return strand_.run([this] { return snapshot_on_strand(); });
  }

  /// Strand only. Returns true if an event was written.
  bool publish_state() {
    auto snap = snapshot_on_strand();
    if (snap == last_published_) return false;
    last_published_ = snap;
    emit_({{"event", "state"}, {"device", name()}, {"state", std::move(snap)}});
    return true;
  }

  void restore(const json& state) {
    strand_.run([&] {
      std::visit([&](auto& c) { c->restore(state); }, controller_);
      last_published_ = state;
      if (snapshot_on_strand() != state) publish_state();
    });
  }

  wire::Response handle(const wire::Command& cmd) {
    return op([&]() -> wire::Response {
      if (auto* e = entry_ctl()) return e->handle(cmd);
      if (auto* a = automation_ctl()) return a->handle(cmd);
      return car_ctl()->handle(cmd, clock_ ? clock_->now() : 0);
    });
  }

  // -- link side ------------------------------------------------------------

  void start() {
    open_listener();
    link_thread_ = std::thread([this] { link_loop(); });
  }

  void stop() {
    {
      std::lock_guard lk(mu_);
      if (stopping_) return;
      stopping_ = true;
      if (server_) server_->close();
    }
    cv_.notify_all();
    if (link_thread_.joinable()) link_thread_.join();
    strand_.stop();
  }

  /// Opens the server socket if the adapter is up and no link is active.
  void open_listener() {
    std::lock_guard lk(mu_);
    open_listener_locked();
  }

  std::uint64_t completed_links() const {
    std::lock_guard lk(mu_);
    return completed_links_;
  }

  /// Waits until `n` links have finished and the listener is back.
  bool wait_completed(std::uint64_t n, std::chrono::milliseconds timeout) {
    std::unique_lock lk(mu_);
    return cv_.wait_for(lk, timeout, [&] { return stopping_ || completed_links_ >= n; });
  }

  // Claim bookkeeping lives here but is guarded by the gateway mutex.
  std::optional<std::uint64_t> claimed_by;

 private:
  template <class T>
  T* get() {
    auto* p = std::get_if<std::unique_ptr<T>>(&controller_);
    return p ? p->get() : nullptr;
  }

  void open_listener_locked() {
    if (stopping_ || linked_ || server_) return;
    if (!adapter_.is_enabled()) return;
    server_ = adapter_.listen(entry_.uuid);
    cv_.notify_all();
  }

  void link_loop() {
    for (;;) {
      std::optional<bt::ServerSocket> server;
      {
        std::unique_lock lk(mu_);
        cv_.wait_for(lk, 50ms, [&] { return stopping_ || server_.has_value(); });
        if (stopping_) return;
        if (!server_) {
          open_listener_locked();
          continue;
        }
        server = server_;
      }
      bt::LinkSocket link;
      try {
        link = server->accept(50ms);
      } catch (const bt::LinkError& e) {
        if (e.code() == bt::LinkErrc::kClosed) {
          std::lock_guard lk(mu_);
          server_.reset();
        }
        continue;
      }
      {
        std::lock_guard lk(mu_);
        server->close();
        server_.reset();
        linked_ = true;
      }
      serve(link);
      link.close();
      try {
        strand_.run([this] {
          if (auto* e = entry_ctl()) e->on_link_closed();
        });
      } catch (const std::runtime_error&) {
        // strand already stopped during shutdown
      }
      {
        std::lock_guard lk(mu_);
        linked_ = false;
        ++completed_links_;
        open_listener_locked();
      }
      cv_.notify_all();
    }
  }

  void serve(bt::LinkSocket& link) {
    wire::Decoder decoder;
    std::array<std::uint8_t, 256> buf{};
    for (;;) {
      std::size_t n = 0;
      try {
        n = link.read(buf, 50ms);
      } catch (const bt::LinkError& e) {
        if (e.code() == bt::LinkErrc::kTimeout) {
          std::lock_guard lk(mu_);
          if (stopping_) return;
          continue;
        }
        return;
      }
      if (n == 0) return;
      for (auto& item : decoder.feed(std::span(buf.data(), n))) {
        const auto* frame = std::get_if<wire::Frame>(&item);
        // Firmware silently drops anything that does not decode.
        if (!frame || frame->device_class != entry_.device_class) continue;
        wire::Response resp;
        try {
          auto cmd = wire::parse_command(*frame);
          if (std::holds_alternative<wire::TempQuery>(cmd) && temp_conversion_ms_ > 0 && clock_ &&
              clock_->mode() == SimClock::Mode::kRealtime) {
            std::this_thread::sleep_for(std::chrono::milliseconds(temp_conversion_ms_));
          }
          resp = handle(cmd);
        } catch (const wire::MessageError&) {
          resp = wire::Nack{wire::NackReason::kMalformed};
        }
        try {
          link.write(wire::encode_frame(resp, entry_.device_class));
        } catch (const bt::LinkError&) {
          return;
        }
      }
    }
  }

  DeviceEntry entry_;
  bt::Adapter adapter_;
  Controller controller_;
  std::function<void(json)> emit_;
  const SimClock* clock_;
  SimMillis temp_conversion_ms_;
  Strand strand_;
  json last_published_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::optional<bt::ServerSocket> server_;
  bool linked_ = false;
  bool stopping_ = false;
  std::uint64_t completed_links_ = 0;
  std::thread link_thread_;
};

// ---------------------------------------------------------------------------
// Sessions
// ---------------------------------------------------------------------------

struct Session {
  std::uint64_t number = 0;
  std::string token;
  Transport transport = Transport::kLocal;
  bt::Adapter phone;
  std::mutex mu;
  std::optional<wire::DeviceClass> device;
  bt::LinkSocket link;
  wire::Decoder decoder;
  std::uint64_t link_generation = 0;

  Session(bt::Adapter a) : phone(std::move(a)) {}
};

struct LoginReply {
  bool ok = false;
  std::string token;
  std::string message;
};

// ---------------------------------------------------------------------------
// Gateway
// ---------------------------------------------------------------------------

class Gateway {
 public:
  static constexpr auto kLinkTimeout = 5000ms;

  explicit Gateway(GatewayConfig cfg)
      : cfg_((cfg.validate(), std::move(cfg))),
        clock_(cfg_.clock == ClockMode::kManual ? SimClock::Mode::kManual : SimClock::Mode::kRealtime),
        radio_(bt::VirtualRadio::create(bt::RadioParams{})),
        credentials_(cfg_.credentials.build_store()) {
    std::filesystem::create_directories(cfg_.data_dir);
    log_ = std::make_unique<EventLog>(cfg_.data_dir,
                                      EventLog::Options{cfg_.snapshot_every, cfg_.rotate_bytes});
    const auto& rec = log_->recovered();
    if (clock_.mode() == SimClock::Mode::kManual) {
      clock_.advance_to(rec.t);
    } else {
      clock_.resume_from(rec.t);
    }

    alerts_ = std::make_shared<sec::AlertChannel>();
    alerts_->recipients = cfg_.recipients;
    alerts_->sms_template = cfg_.sms_template;
    alerts_->outbox = std::make_shared<sec::Outbox>(cfg_.data_dir / "sms_outbox.jsonl");
    alerts_->modem = std::make_shared<sec::GsmModem>(cfg_.data_dir / "gsm_transcript.log");

    build_hosts();
    load_bonds();
    for (auto& h : hosts_) {
      if (auto it = rec.devices.find(h->name()); it != rec.devices.end()) {
        h->restore(it->second);
      } else {
        h->strand().run([&] { h->publish_state(); });
      }
    }
    if (auto* e = host(wire::DeviceClass::kEntry).entry_ctl(); e->bt_powered()) {
      host(wire::DeviceClass::kEntry).adapter().request_enable();
    }
    for (auto& h : hosts_) h->start();
    if (clock_.mode() == SimClock::Mode::kRealtime) {
      ticker_ = std::thread([this] { tick_loop(); });
    }
  }

  ~Gateway() { shutdown(); }
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void shutdown() {
    {
      std::lock_guard lk(mu_);
      if (shut_down_) return;
      shut_down_ = true;
    }
    tick_cv_.notify_all();
    if (ticker_.joinable()) ticker_.join();
    std::vector<std::shared_ptr<Session>> sessions;
    {
      std::lock_guard lk(mu_);
      for (auto& [_, s] : sessions_) sessions.push_back(s);
      sessions_.clear();
    }
    for (auto& s : sessions) {
      std::lock_guard lk(s->mu);
      s->link.close();
    }
    for (auto& h : hosts_) h->stop();
    log_->snapshot_now();
  }

  const GatewayConfig& config() const { return cfg_; }
  SimClock& clock() { return clock_; }
  EventLog& log() { return *log_; }
  const std::shared_ptr<bt::VirtualRadio>& radio() const { return radio_; }
  const std::shared_ptr<sec::AlertChannel>& alerts() const { return alerts_; }
  const std::shared_ptr<sec::CredentialStore>& credentials() const { return credentials_; }

  DeviceHost& host(wire::DeviceClass c) {
    for (auto& h : hosts_) {
      if (h->entry().device_class == c) return *h;
    }
    throw GatewayError("bad_device", "no such device");
  }

  json emit(json event) { return log_->append(std::move(event), clock_.now()); }

  // -- sessions ---------------------------------------------------------------

  LoginReply login(std::string_view user, std::string_view password, Transport t) {
    auto r = credentials_->verify_app_login(user, password);
    if (!r.ok) return {false, {}, r.message};
    return {true, open_session(t), {}};
  }

  /// The raw plane has no app login; each TCP client gets a session directly.
  std::string open_session(Transport t) {
    std::uint64_t n;
    {
      std::lock_guard lk(mu_);
      if (shut_down_) throw GatewayError("shutdown", "gateway is shutting down");
      n = ++session_counter_;
    }
    bt::MacAddress mac{};
    mac.bytes = {0x02, 0x00, 0x00, static_cast<std::uint8_t>(n >> 16),
                 static_cast<std::uint8_t>(n >> 8), static_cast<std::uint8_t>(n)};
    auto adapter = radio_->register_adapter(mac, "phone-" + std::to_string(n), true);
    auto s = std::make_shared<Session>(std::move(adapter));
    s->number = n;
    s->transport = t;
    s->token = make_token(n);
    {
      std::lock_guard lk(mu_);
      sessions_[s->token] = s;
    }
    return s->token;
  }

  void close_session(const std::string& token) {
    std::shared_ptr<Session> s;
    {
      std::lock_guard lk(mu_);
      auto it = sessions_.find(token);
      if (it == sessions_.end()) return;
      s = it->second;
      sessions_.erase(it);
    }
    std::lock_guard lk(s->mu);
    detach_locked(*s);
    radio_->unregister_adapter(s->phone.mac());
  }

  std::uint64_t session_number(const std::string& token) { return session(token)->number; }

  std::optional<wire::DeviceClass> attached_device(const std::string& token) {
    auto s = session(token);
    std::lock_guard lk(s->mu);
    return s->device;
  }

  AttachResult attach(const std::string& token, wire::DeviceClass cls,
                      std::optional<bt::MacAddress> mac = std::nullopt,
                      std::optional<bt::Uuid> uuid = std::nullopt) {
    auto s = session(token);
    std::lock_guard slk(s->mu);
    if (s->device == cls) return AttachResult::kAttached;
    detach_locked(*s);
    auto& h = host(cls);
    {
      std::lock_guard lk(mu_);
      if (h.claimed_by) return AttachResult::kBusy;
      h.claimed_by = s->number;
    }
    const auto generation = h.completed_links();
    AttachResult result = AttachResult::kAttached;
    try {
      s->link = s->phone.connect(mac.value_or(h.entry().mac), uuid.value_or(h.entry().uuid),
                                 kLinkTimeout);
    } catch (const bt::LinkError& e) {
      switch (e.code()) {
        case bt::LinkErrc::kConnectionRefused: result = AttachResult::kRefused; break;
        case bt::LinkErrc::kTimeout: result = AttachResult::kTimeout; break;
        default: result = AttachResult::kUnreachable; break;
      }
    }
    if (result != AttachResult::kAttached) {
      std::lock_guard lk(mu_);
      h.claimed_by.reset();
      return result;
    }
    s->device = cls;
    s->decoder.reset();
    s->link_generation = generation;
    emit({{"event", "attach"}, {"device", h.name()}, {"session", s->number}});
    save_bonds();
    return result;
  }

  void detach(const std::string& token) {
    auto s = session(token);
    std::lock_guard lk(s->mu);
    detach_locked(*s);
  }

  /// Sends one command over the session's link and waits for the reply.
  wire::Response dispatch(const std::string& token, const wire::Command& cmd) {
    auto s = session(token);
    std::lock_guard lk(s->mu);
    if (!s->device) throw GatewayError("not_attached", "session is not attached to a device");
    const auto cls = *s->device;
    auto& h = host(cls);
    auto* sec_model = h.security();

    json ev = command_to_json(cmd);
    ev["event"] = "command";
    ev["device"] = h.name();
    ev["session"] = s->number;
    emit(ev);

    const auto collapses_before = collapse_notices_.load();
    wire::Response resp;
    try {
      s->link.write(wire::encode_frame(cmd, cls));
      resp = read_response(*s);
    } catch (const bt::LinkError& e) {
      drop_link_locked(*s);
      throw GatewayError("link", std::string("link: ") + std::string(bt::errc_name(e.code())));
    }

    json rev = response_to_json(resp);
    rev["event"] = "response";
    rev["device"] = h.name();
    rev["session"] = s->number;
    emit(rev);

    if (const auto* step = std::get_if<wire::FanStep>(&cmd);
        step && std::holds_alternative<wire::Ack>(resp)) {
      emit({{"event", "toast"}, {"device", h.name()}, {"text", fan_toast(step->delta)}});
    }
    if (std::holds_alternative<wire::Collapsed>(resp) && sec_model &&
        collapse_notices_.load() == collapses_before) {
      emit({{"event", "collapsed"}, {"device", h.name()}, {"collapsed", true},
            {"rejected", wire::command_name(cmd)}});
    }
    return resp;
  }

  // -- scenario / operator injection -----------------------------------------

  json inject_keypad(std::string_view keys) {
    for (char k : keys) {
      if (!((k >= '0' && k <= '9') || k == '*' || k == '#')) {
        throw GatewayError("bad_arg", std::string("not a keypad key: ") + k);
      }
    }
    auto& h = host(wire::DeviceClass::kEntry);
    emit({{"event", "inject"}, {"kind", "keypad"}, {"device", h.name()}, {"count", keys.size()}});
    bool powered = false;
    for (char k : keys) {
      auto r = h.op([&] { return h.entry_ctl()->keypress(k); });
      powered = powered || r.powered_now;
    }
    if (powered) {
      h.adapter().request_enable();
      h.open_listener();
    }
    return h.strand().run([&] {
      auto* e = h.entry_ctl();
      auto rows = e->lcd().text();
      return json{{"lcd", {rows[0], rows[1]}},
                  {"bt_powered", e->bt_powered()},
                  {"collapsed", e->security().collapsed()}};
    });
  }

  json inject_ambient(double celsius) {
    if (!std::isfinite(celsius)) throw GatewayError("bad_arg", "ambient must be finite");
    auto& h = host(wire::DeviceClass::kAutomation);
    emit({{"event", "inject"}, {"kind", "ambient"}, {"device", h.name()}, {"celsius", celsius}});
    auto raw = h.op([&] {
      auto* a = h.automation_ctl();
      if (a->sensor().set_ambient(celsius)) {
        emit({{"event", "sensor_clamped"}, {"device", h.name()}, {"ambient", celsius},
              {"clamped_to", std::clamp(celsius, dev::kTempMin, dev::kTempMax)}});
      }
      return a->sensor().read();
    });
    return {{"temp_raw", raw}, {"temp_c", raw * dev::kTempLsb}};
  }

  sec::ResetOutcome inject_reset(wire::DeviceClass cls, std::string_view code) {
    auto& h = host(cls);
    if (!h.security()) throw GatewayError("bad_device", h.name() + " has no lockout");
    auto r = h.op([&] {
      if (auto* e = h.entry_ctl()) return e->authorized_reset(code);
      return h.car_ctl()->security().authorized_reset(code);
    });
    emit({{"event", "inject"}, {"kind", "reset"}, {"device", h.name()},
          {"outcome", reset_outcome_name(r)}});
    return r;
  }

  /// Manual clock only.
  void advance_to(SimMillis t) {
    if (clock_.mode() != SimClock::Mode::kManual) {
      throw GatewayError("unsupported", "clock is realtime");
    }
    try {
      clock_.advance_to(t);
    } catch (const std::invalid_argument& e) {
      throw GatewayError("bad_arg", e.what());
    }
    tick();
  }

  json devices() {
    json out = json::array();
    for (auto& h : hosts_) {
      std::optional<std::uint64_t> owner;
      {
        std::lock_guard lk(mu_);
        owner = h->claimed_by;
      }
      out.push_back({{"device", h->name()},
                     {"mac", h->entry().mac.to_string()},
                     {"name", h->entry().name},
                     {"uuid", h->entry().uuid.to_string()},
                     {"bt_enabled", h->adapter().is_enabled()},
                     {"attached", owner.has_value()},
                     {"state", h->snapshot()}});
    }
    return out;
  }

  std::vector<bt::RemoteDevice> scan(const std::string& token, std::chrono::milliseconds duration) {
    auto s = session(token);
    std::lock_guard lk(s->mu);
    auto found = s->phone.discover(duration);
    // Other sessions' phones are on the same radio; only devices matter.
    std::erase_if(found, [&](const bt::RemoteDevice& d) {
      return std::none_of(hosts_.begin(), hosts_.end(),
                          [&](const auto& h) { return h->entry().mac == d.mac; });
    });
    return found;
  }

  std::map<std::string, json> live_snapshots() {
    std::map<std::string, json> out;
    for (auto& h : hosts_) out[h->name()] = h->snapshot();
    return out;
  }

 private:
  std::shared_ptr<Session> session(const std::string& token) {
    std::lock_guard lk(mu_);
    auto it = sessions_.find(token);
    if (it == sessions_.end()) throw GatewayError("no_session", "unknown or expired session");
    return it->second;
  }

  std::string make_token(std::uint64_t n) {
    sec::detail::ensure_sodium();
    std::array<std::uint8_t, 12> raw{};
    randombytes_buf(raw.data(), raw.size());
    return "s" + std::to_string(n) + "-" + sec::detail::to_hex(raw);
  }

  void build_hosts() {
    auto make_sec = [&](const std::string& name, std::set<sec::Purpose> purposes) {
      sec::SecurityModel m(name, credentials_, alerts_, &clock_, std::move(purposes));
      m.set_listener([this](const sec::SecurityNotice& n) { on_security_notice(n); });
      return m;
    };
    for (const auto& d : cfg_.devices) {
      const bool starts_enabled = d.device_class != wire::DeviceClass::kEntry;
      auto adapter = radio_->register_adapter(d.mac, d.name, starts_enabled, d.uuid);
      DeviceHost::Controller ctl;
      const std::string name(wire::device_class_name(d.device_class));
      switch (d.device_class) {
        case wire::DeviceClass::kEntry:
          ctl = std::make_unique<dev::EntryController>(
              make_sec(name, {sec::Purpose::kDoorBtEnable, sec::Purpose::kDoorLock}));
          break;
        case wire::DeviceClass::kAutomation:
          ctl = std::make_unique<dev::AutomationController>(cfg_.mains_hz);
          break;
        case wire::DeviceClass::kCar:
          ctl = std::make_unique<dev::CarController>(
              make_sec(name, {sec::Purpose::kCarLock, sec::Purpose::kCarUnlock}), cfg_.pulse_ms);
          break;
      }
      hosts_.push_back(std::make_unique<DeviceHost>(
          d, std::move(adapter), std::move(ctl), [this](json e) { emit(std::move(e)); }, &clock_,
          cfg_.temp_conversion_ms));
    }
  }

  void on_security_notice(const sec::SecurityNotice& n) {
    using K = sec::SecurityNotice::Kind;
    switch (n.kind) {
      case K::kCollapse:
        ++collapse_notices_;
        emit({{"event", "collapsed"}, {"device", n.device}, {"collapsed", true}});
        break;
      case K::kAlarmOn: emit({{"event", "alarm"}, {"device", n.device}, {"on", true}}); break;
      case K::kAlarmOff: emit({{"event", "alarm"}, {"device", n.device}, {"on", false}}); break;
      case K::kSms:
        emit({{"event", "sms"}, {"device", n.device}, {"recipient", n.sms->recipient},
              {"body", n.sms->body}, {"sent_at", n.sms->sent_at}});
        break;
      case K::kDeliveryFailed:
        emit({{"event", "delivery_failed"}, {"device", n.device}, {"recipient", n.sms->recipient}});
        break;
      case K::kRearmed:
        emit({{"event", "reset"}, {"device", n.device}, {"outcome", "rearmed"}});
        break;
    }
  }

  wire::Response read_response(Session& s) {
    const auto deadline = std::chrono::steady_clock::now() + kLinkTimeout;
    std::array<std::uint8_t, 256> buf{};
    for (;;) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left <= 0ms) throw bt::LinkError(bt::LinkErrc::kTimeout);
      const auto n = s.link.read(buf, left);
      if (n == 0) throw bt::LinkError(bt::LinkErrc::kClosed);
      for (auto& item : s.decoder.feed(std::span(buf.data(), n))) {
        if (const auto* err = std::get_if<wire::DecodeError>(&item)) {
          throw GatewayError("decode", std::string(wire::decode_error_name(*err)));
        }
        try {
          return wire::parse_response(std::get<wire::Frame>(item));
        } catch (const wire::MessageError& e) {
          throw GatewayError("decode", e.what());
        }
      }
    }
  }

  // The link is gone underneath the session; release the device.
  void drop_link_locked(Session& s) { detach_locked(s); }

  void detach_locked(Session& s) {
    if (!s.device) return;
    auto& h = host(*s.device);
    s.link.close();
    h.wait_completed(s.link_generation + 1, kLinkTimeout);
    {
      std::lock_guard lk(mu_);
      h.claimed_by.reset();
    }
    s.device.reset();
    radio_->clear_trace();
    emit({{"event", "detach"}, {"device", h.name()}, {"session", s.number}});
  }

  void tick() {
    auto& h = host(wire::DeviceClass::kCar);
    const auto now = clock_.now();
    h.op([&] { h.car_ctl()->tick(now); });
  }

  void tick_loop() {
    std::unique_lock lk(mu_);
    while (!shut_down_) {
      tick_cv_.wait_for(lk, 20ms);
      if (shut_down_) break;
      lk.unlock();
      tick();
      lk.lock();
    }
  }

  void load_bonds() {
    const auto p = cfg_.data_dir / "bonds.json";
    if (!std::filesystem::exists(p)) return;
    try {
      std::ifstream in(p);
      auto j = json::parse(in);
      for (auto& h : hosts_) {
        const auto key = h->entry().mac.to_string();
        if (!j.contains(key)) continue;
        for (const auto& peer : j[key]) {
          if (auto m = bt::MacAddress::parse(peer.get<std::string>())) h->adapter().add_bond(*m);
        }
      }
    } catch (const json::exception&) {
      // A damaged bond table only costs re-pairing.
    }
  }

  void save_bonds() {
    std::lock_guard lk(bonds_mu_);
    const auto path = cfg_.data_dir / "bonds.json";
    json j = json::object();
    if (std::filesystem::exists(path)) {
      try {
        std::ifstream in(path);
        j = json::parse(in);
      } catch (const json::exception&) {
        j = json::object();
      }
    }
    for (auto& h : hosts_) {
      // A powered-down adapter cannot be queried; keep what was stored.
      if (!h->adapter().is_enabled()) continue;
      json peers = json::array();
      for (const auto& d : h->adapter().bonded_devices()) peers.push_back(d.mac.to_string());
      j[h->entry().mac.to_string()] = peers;
    }
    const auto tmp = cfg_.data_dir / "bonds.json.tmp";
    {
      std::ofstream o(tmp, std::ios::trunc);
      o << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
  }

  GatewayConfig cfg_;
  SimClock clock_;
  std::shared_ptr<bt::VirtualRadio> radio_;
  std::shared_ptr<sec::CredentialStore> credentials_;
  std::shared_ptr<sec::AlertChannel> alerts_;
  std::unique_ptr<EventLog> log_;
  std::vector<std::unique_ptr<DeviceHost>> hosts_;
  std::atomic<std::uint64_t> collapse_notices_{0};

  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t session_counter_ = 0;
  bool shut_down_ = false;
  std::condition_variable tick_cv_;
  std::thread ticker_;
  std::mutex bonds_mu_;
};

}  // namespace homelink::gw
