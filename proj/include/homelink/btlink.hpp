/*
 * btlink.hpp
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
 * @file btlink.hpp
 * @brief In-process Bluetooth serial-port simulation.
 *
 * A VirtualRadio owns every adapter's state behind one mutex and runs a single
 * scheduler thread for timed work (discovery inquiry results). Adapter,
 * ServerSocket and LinkSocket are cheap handles onto that state.
 *
 * Lifecycle mirrored from the phone side of an SPP connection:
 *   state / request_enable -> bonded_devices -> start_discovery / cancel
 *   -> listen(uuid) + accept   (device side)
 *   -> connect(mac, uuid)      (phone side; cancels discovery first)
 *   -> LinkSocket read / write (survives ServerSocket::close)
 */

#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <queue>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

namespace homelink::bt {

using Clock = std::chrono::steady_clock;
using std::chrono::milliseconds;

// ---------------------------------------------------------------------------
// Addresses
// ---------------------------------------------------------------------------

namespace detail {
inline int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}
inline void append_hex(std::string& out, std::uint8_t b) {
  static constexpr char digits[] = "0123456789ABCDEF";
  out.push_back(digits[b >> 4]);
  out.push_back(digits[b & 0x0F]);
}
}  // namespace detail

struct MacAddress {
  std::array<std::uint8_t, 6> bytes{};

  /// Accepts AA:BB:CC:DD:EE:FF in either case.
  static std::optional<MacAddress> parse(std::string_view s) {
    if (s.size() != 17) return std::nullopt;
    MacAddress m;
    for (std::size_t i = 0; i < 6; ++i) {
      if (i > 0 && s[i * 3 - 1] != ':') return std::nullopt;
      int hi = detail::hex_value(s[i * 3]);
      int lo = detail::hex_value(s[i * 3 + 1]);
      if (hi < 0 || lo < 0) return std::nullopt;
      m.bytes[i] = static_cast<std::uint8_t>(hi << 4 | lo);
    }
    return m;
  }

  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < 6; ++i) {
      if (i) s.push_back(':');
      detail::append_hex(s, bytes[i]);
    }
    return s;
  }

  auto operator<=>(const MacAddress&) const = default;
};

/// 128-bit service identifier, rendered 8-4-4-4-12 upper-case hex.
struct Uuid {
  std::array<std::uint8_t, 16> bytes{};

  static std::optional<Uuid> parse(std::string_view s) {
    if (s.size() != 36) return std::nullopt;
    Uuid u;
    std::size_t out = 0;
    for (std::size_t i = 0; i < s.size();) {
      if (i == 8 || i == 13 || i == 18 || i == 23) {
        if (s[i] != '-') return std::nullopt;
        ++i;
        continue;
      }
      int hi = detail::hex_value(s[i]);
      int lo = detail::hex_value(s[i + 1]);
      if (hi < 0 || lo < 0) return std::nullopt;
      u.bytes[out++] = static_cast<std::uint8_t>(hi << 4 | lo);
      i += 2;
    }
    return u;
  }

  std::string to_string() const {
    std::string s;
    for (std::size_t i = 0; i < 16; ++i) {
      if (i == 4 || i == 6 || i == 8 || i == 10) s.push_back('-');
      detail::append_hex(s, bytes[i]);
    }
    return s;
  }

  auto operator<=>(const Uuid&) const = default;
};

/// Serial Port Profile service class, the profile HC-06 modules advertise.
inline Uuid spp_uuid() { return *Uuid::parse("00001101-0000-1000-8000-00805F9B34FB"); }

// ---------------------------------------------------------------------------
// Errors and plain types
// ---------------------------------------------------------------------------

enum class LinkErrc {
  kNotSupported,
  kDisabled,
  kTimeout,
  kClosed,
  kHostUnreachable,
  kConnectionRefused,
};

inline std::string_view errc_name(LinkErrc e) {
  switch (e) {
    case LinkErrc::kNotSupported: return "not-supported";
    case LinkErrc::kDisabled: return "disabled";
    case LinkErrc::kTimeout: return "timeout";
    case LinkErrc::kClosed: return "closed";
    case LinkErrc::kHostUnreachable: return "host-unreachable";
    case LinkErrc::kConnectionRefused: return "connection-refused";
  }
  return "?";
}

class LinkError : public std::runtime_error {
 public:
  explicit LinkError(LinkErrc code, const std::string& what = {})
      : std::runtime_error(std::string(errc_name(code)) + (what.empty() ? "" : ": " + what)),
        code_(code) {}
  LinkErrc code() const { return code_; }

 private:
  LinkErrc code_;
};

enum class AdapterState { kAbsent, kDisabled, kEnabled };

struct RemoteDevice {
  MacAddress mac;
  std::string friendly_name;
  Uuid service;
  bool in_range = false;
  bool operator==(const RemoteDevice&) const = default;
};

struct DiscoveryEvent {
  enum class Kind { kFound, kFinished } kind = Kind::kFound;
  RemoteDevice device;  // valid for kFound
};

enum class RangeTier { k10m, k100m };

/// Connection class parameters. Range tier and rate are informational only.
struct RadioParams {
  RangeTier range = RangeTier::k10m;
  double nominal_rate_mbps = 3.0;
  milliseconds latency{0};
  /// Newly registered adapters start within range of every other adapter.
  bool default_in_range = true;
  /// Upper bound on the gap between consecutive inquiry results.
  milliseconds inquiry_step{20};
};

// ---------------------------------------------------------------------------
// Byte pipes
// ---------------------------------------------------------------------------

namespace detail {

struct Pipe {
  struct Chunk {
    Clock::time_point deliver_at;
    std::vector<std::uint8_t> bytes;
    std::size_t offset = 0;
  };
  std::mutex mu;
  std::condition_variable cv;
  std::deque<Chunk> chunks;
  bool writer_closed = false;
  bool reader_closed = false;
};

struct Channel {
  Pipe pipes[2];  // pipes[i] carries bytes written by side i
  milliseconds latency{0};
};

}  // namespace detail

/// One end of a connected serial link. Move-only; closes on destruction.
class LinkSocket {
 public:
  LinkSocket() = default;
  LinkSocket(std::shared_ptr<detail::Channel> ch, int side, MacAddress local, MacAddress remote)
      : channel_(std::move(ch)), side_(side), local_(local), remote_(remote) {}
  LinkSocket(LinkSocket&&) noexcept = default;
  LinkSocket& operator=(LinkSocket&& other) noexcept {
    if (this != &other) {
      close();
      channel_ = std::move(other.channel_);
      side_ = other.side_;
      local_ = other.local_;
      remote_ = other.remote_;
    }
    return *this;
  }
  LinkSocket(const LinkSocket&) = delete;
  LinkSocket& operator=(const LinkSocket&) = delete;
  ~LinkSocket() { close(); }

  const MacAddress& local() const { return local_; }
  const MacAddress& remote() const { return remote_; }

  bool connected() const {
    if (!channel_) return false;
    auto& out = channel_->pipes[side_];
    std::lock_guard lk(out.mu);
    return !out.writer_closed && !out.reader_closed;
  }

  void write(std::span<const std::uint8_t> bytes) {
    if (!channel_) throw LinkError(LinkErrc::kClosed);
    auto& out = channel_->pipes[side_];
    {
      std::lock_guard lk(out.mu);
      if (out.writer_closed || out.reader_closed) throw LinkError(LinkErrc::kClosed);
      if (bytes.empty()) return;
      out.chunks.push_back({Clock::now() + channel_->latency, {bytes.begin(), bytes.end()}, 0});
    }
    out.cv.notify_all();
  }

  /// Blocks until at least one byte is readable. Returns 0 once the peer has
  /// closed and every byte it wrote has been read.
  std::size_t read(std::span<std::uint8_t> buf, milliseconds timeout) {
    if (!channel_) throw LinkError(LinkErrc::kClosed);
    auto& in = channel_->pipes[1 - side_];
    const auto deadline = Clock::now() + timeout;
    std::unique_lock lk(in.mu);
    for (;;) {
      if (in.reader_closed) throw LinkError(LinkErrc::kClosed);
      const auto now = Clock::now();
      if (!in.chunks.empty() && in.chunks.front().deliver_at <= now) break;
      if (in.chunks.empty() && in.writer_closed) return 0;
      auto wake = deadline;
      if (!in.chunks.empty()) wake = std::min(wake, in.chunks.front().deliver_at);
      if (now >= deadline) throw LinkError(LinkErrc::kTimeout);
      in.cv.wait_until(lk, wake);
    }
    std::size_t n = 0;
    const auto now = Clock::now();
    while (n < buf.size() && !in.chunks.empty() && in.chunks.front().deliver_at <= now) {
      auto& c = in.chunks.front();
      std::size_t take = std::min(buf.size() - n, c.bytes.size() - c.offset);
      std::copy_n(c.bytes.begin() + static_cast<std::ptrdiff_t>(c.offset), take, buf.begin() + n);
      c.offset += take;
      n += take;
      if (c.offset == c.bytes.size()) in.chunks.pop_front();
    }
    return n;
  }

  void close() {
    if (!channel_) return;
    auto& out = channel_->pipes[side_];
    auto& in = channel_->pipes[1 - side_];
    {
      std::lock_guard lk(out.mu);
      out.writer_closed = true;
    }
    out.cv.notify_all();
    {
      std::lock_guard lk(in.mu);
      in.reader_closed = true;
      in.chunks.clear();
    }
    in.cv.notify_all();
    channel_.reset();
  }

 private:
  std::shared_ptr<detail::Channel> channel_;
  int side_ = 0;
  MacAddress local_;
  MacAddress remote_;
};

class VirtualRadio;
class Adapter;

// ---------------------------------------------------------------------------
// Server sockets
// ---------------------------------------------------------------------------

namespace detail {

struct PendingConnect {
  enum class Status { kWaiting, kAccepted, kRefused } status = Status::kWaiting;
  MacAddress client;
  std::shared_ptr<Channel> channel;
};

struct ServerCore {
  MacAddress owner;
  Uuid uuid;
  bool open = true;
  std::deque<std::shared_ptr<PendingConnect>> pending;
  std::condition_variable cv;
};

}  // namespace detail

/// Listening socket bound to one service UUID. Closing it never affects links
/// it has already produced.
class ServerSocket {
 public:
  ServerSocket() = default;
  ServerSocket(std::shared_ptr<VirtualRadio> radio, std::shared_ptr<detail::ServerCore> core)
      : radio_(std::move(radio)), core_(std::move(core)) {}

  LinkSocket accept(milliseconds timeout);
  void close();
  bool is_open() const;
  Uuid uuid() const { return core_->uuid; }

 private:
  std::shared_ptr<VirtualRadio> radio_;
  std::shared_ptr<detail::ServerCore> core_;
};

// ---------------------------------------------------------------------------
// Radio
// ---------------------------------------------------------------------------

class VirtualRadio : public std::enable_shared_from_this<VirtualRadio> {
 public:
  static std::shared_ptr<VirtualRadio> create(RadioParams params = {}) {
    return std::shared_ptr<VirtualRadio>(new VirtualRadio(params));
  }

  ~VirtualRadio() {
    {
      std::lock_guard lk(mu_);
      stopping_ = true;
    }
    sched_cv_.notify_all();
    if (scheduler_.joinable()) scheduler_.join();
  }

  VirtualRadio(const VirtualRadio&) = delete;
  VirtualRadio& operator=(const VirtualRadio&) = delete;

  /// Registers a new adapter. Throws std::invalid_argument on a duplicate MAC.
  Adapter register_adapter(MacAddress mac, std::string friendly_name, bool enabled = false,
                           Uuid service = spp_uuid());

  void unregister_adapter(MacAddress mac) {
    std::vector<std::shared_ptr<detail::ServerCore>> servers;
    {
      std::lock_guard lk(mu_);
      auto it = adapters_.find(mac);
      if (it == adapters_.end()) return;
      servers = it->second.servers;
      ++it->second.discovery_generation;
      adapters_.erase(it);
      for (auto r = range_.begin(); r != range_.end();) {
        r = (r->first == mac || r->second == mac) ? range_.erase(r) : std::next(r);
      }
      trace_locked("unregister " + mac.to_string());
    }
    for (auto& s : servers) ServerSocket(shared_from_this(), s).close();
  }

  /// Models the platform's default-adapter lookup: empty when the MAC has no
  /// registered adapter.
  std::optional<Adapter> default_adapter(MacAddress mac);

  void set_in_range(MacAddress a, MacAddress b, bool in_range) {
    std::lock_guard lk(mu_);
    auto key = ordered(a, b);
    if (in_range) {
      range_.insert(key);
    } else {
      range_.erase(key);
    }
  }

  bool in_range(MacAddress a, MacAddress b) const {
    std::lock_guard lk(mu_);
    return in_range_locked(a, b);
  }

  void set_latency(milliseconds latency) {
    std::lock_guard lk(mu_);
    params_.latency = latency;
  }

  RadioParams params() const {
    std::lock_guard lk(mu_);
    return params_;
  }

  /// Ordered record of every connection-state mutation.
  std::vector<std::string> trace() const {
    std::lock_guard lk(mu_);
    return trace_;
  }

  void clear_trace() {
    std::lock_guard lk(mu_);
    trace_.clear();
  }

 private:
  friend class Adapter;
  friend class ServerSocket;

  struct AdapterRecord {
    std::string friendly_name;
    Uuid service;
    bool enabled = false;
    bool discovering = false;
    std::uint64_t discovery_generation = 0;
    std::set<MacAddress> bonded;
    std::deque<DiscoveryEvent> discovery_events;
    std::vector<std::shared_ptr<detail::ServerCore>> servers;
  };

  struct Task {
    Clock::time_point due;
    std::uint64_t seq;
    std::function<void()> fn;  // runs with mu_ held
    bool operator>(const Task& o) const { return std::tie(due, seq) > std::tie(o.due, o.seq); }
  };

  explicit VirtualRadio(RadioParams params) : params_(params) {
    scheduler_ = std::thread([this] { run_scheduler(); });
  }

  static std::pair<MacAddress, MacAddress> ordered(MacAddress a, MacAddress b) {
    return a < b ? std::pair{a, b} : std::pair{b, a};
  }

  bool in_range_locked(MacAddress a, MacAddress b) const {
    return range_.count(ordered(a, b)) > 0;
  }

  AdapterRecord* find_locked(MacAddress mac) {
    auto it = adapters_.find(mac);
    return it == adapters_.end() ? nullptr : &it->second;
  }

  void trace_locked(std::string line) { trace_.push_back(std::move(line)); }

  void schedule_locked(Clock::time_point due, std::function<void()> fn) {
    tasks_.push(Task{due, next_task_seq_++, std::move(fn)});
    sched_cv_.notify_all();
  }

  void run_scheduler() {
    std::unique_lock lk(mu_);
    while (!stopping_) {
      if (tasks_.empty()) {
        sched_cv_.wait(lk);
        continue;
      }
      auto due = tasks_.top().due;
      if (Clock::now() < due) {
        sched_cv_.wait_until(lk, due);
        continue;
      }
      Task t = tasks_.top();
      tasks_.pop();
      t.fn();
    }
  }

  void cancel_discovery_locked(MacAddress mac, AdapterRecord& rec, std::string_view why) {
    if (!rec.discovering) return;
    rec.discovering = false;
    ++rec.discovery_generation;
    trace_locked("discovery_cancel " + mac.to_string() + std::string(why));
    rec.discovery_events.push_back({DiscoveryEvent::Kind::kFinished, {}});
    discovery_cv_.notify_all();
  }

  mutable std::mutex mu_;
  std::condition_variable sched_cv_;
  std::condition_variable discovery_cv_;
  std::condition_variable connect_cv_;
  RadioParams params_;
  std::map<MacAddress, AdapterRecord> adapters_;
  std::set<std::pair<MacAddress, MacAddress>> range_;
  std::vector<std::string> trace_;
  std::priority_queue<Task, std::vector<Task>, std::greater<>> tasks_;
  std::uint64_t next_task_seq_ = 0;
  bool stopping_ = false;
  std::thread scheduler_;
};

// ---------------------------------------------------------------------------
// Adapter handle
// ---------------------------------------------------------------------------

class Adapter {
 public:
  Adapter(std::shared_ptr<VirtualRadio> radio, MacAddress mac)
      : radio_(std::move(radio)), mac_(mac) {}

  const MacAddress& mac() const { return mac_; }
  const std::shared_ptr<VirtualRadio>& radio() const { return radio_; }

  AdapterState state() const {
    std::lock_guard lk(radio_->mu_);
    auto* rec = radio_->find_locked(mac_);
    if (!rec) return AdapterState::kAbsent;
    return rec->enabled ? AdapterState::kEnabled : AdapterState::kDisabled;
  }

  bool is_enabled() const { return state() == AdapterState::kEnabled; }

  /// Idempotent. Throws not-supported when the adapter is no longer registered.
  void request_enable() {
    std::lock_guard lk(radio_->mu_);
    auto& rec = require_locked();
    if (rec.enabled) return;
    rec.enabled = true;
    radio_->trace_locked("enable " + mac_.to_string());
  }

  /// Disabling closes the adapter's server sockets and stops discovery.
  void disable() {
    std::vector<std::shared_ptr<detail::ServerCore>> servers;
    {
      std::lock_guard lk(radio_->mu_);
      auto& rec = require_locked();
      if (!rec.enabled) return;
      radio_->cancel_discovery_locked(mac_, rec, "");
      rec.enabled = false;
      servers = rec.servers;
      radio_->trace_locked("disable " + mac_.to_string());
    }
    for (auto& s : servers) ServerSocket(radio_, s).close();
  }

  std::string friendly_name() const {
    std::lock_guard lk(radio_->mu_);
    return require_locked().friendly_name;
  }

  std::vector<RemoteDevice> bonded_devices() const {
    std::lock_guard lk(radio_->mu_);
    auto& rec = require_enabled_locked();
    std::vector<RemoteDevice> out;
    for (const auto& mac : rec.bonded) {
      RemoteDevice d;
      d.mac = mac;
      if (auto* peer = radio_->find_locked(mac)) {
        d.friendly_name = peer->friendly_name;
        d.service = peer->service;
        d.in_range = peer->enabled && radio_->in_range_locked(mac_, mac);
      }
      out.push_back(std::move(d));
    }
    return out;
  }

  /// Restores a persisted bond.
  void add_bond(MacAddress peer) {
    std::lock_guard lk(radio_->mu_);
    require_locked().bonded.insert(peer);
  }

  /// Returns immediately. Found events follow on next_discovery_event(), one
  /// per enabled in-range remote, then a single kFinished.
  bool start_discovery(milliseconds duration) {
    std::lock_guard lk(radio_->mu_);
    auto* rec = radio_->find_locked(mac_);
    if (!rec || !rec->enabled) return false;
    radio_->cancel_discovery_locked(mac_, *rec, " (restart)");
    rec->discovering = true;
    rec->discovery_events.clear();
    const auto gen = ++rec->discovery_generation;

    std::vector<RemoteDevice> found;
    for (const auto& [mac, other] : radio_->adapters_) {
      if (mac == mac_ || !other.enabled || !radio_->in_range_locked(mac_, mac)) continue;
      found.push_back({mac, other.friendly_name, other.service, true});
    }
    radio_->trace_locked("discovery_start " + mac_.to_string() + " n=" +
                         std::to_string(found.size()));

    const auto start = Clock::now();
    auto step = duration / static_cast<long>(found.size() + 1);
    step = std::min<milliseconds>(step, radio_->params_.inquiry_step);
    VirtualRadio* radio = radio_.get();
    const MacAddress self = mac_;
    for (std::size_t i = 0; i < found.size(); ++i) {
      radio->schedule_locked(start + step * static_cast<long>(i + 1), [radio, self, gen,
                                                                       dev = found[i]] {
        auto* r = radio->find_locked(self);
        if (!r || r->discovery_generation != gen || !r->discovering) return;
        radio->trace_locked("found " + self.to_string() + " -> " + dev.mac.to_string());
        r->discovery_events.push_back({DiscoveryEvent::Kind::kFound, dev});
        radio->discovery_cv_.notify_all();
      });
    }
    radio->schedule_locked(start + duration, [radio, self, gen] {
      auto* r = radio->find_locked(self);
      if (!r || r->discovery_generation != gen || !r->discovering) return;
      r->discovering = false;
      radio->trace_locked("discovery_finish " + self.to_string());
      r->discovery_events.push_back({DiscoveryEvent::Kind::kFinished, {}});
      radio->discovery_cv_.notify_all();
    });
    return true;
  }

  /// No-op when idle. No found events are produced after this returns.
  void cancel_discovery() {
    std::lock_guard lk(radio_->mu_);
    if (auto* rec = radio_->find_locked(mac_)) radio_->cancel_discovery_locked(mac_, *rec, "");
  }

  bool is_discovering() const {
    std::lock_guard lk(radio_->mu_);
    auto* rec = radio_->find_locked(mac_);
    return rec && rec->discovering;
  }

  std::optional<DiscoveryEvent> next_discovery_event(milliseconds timeout) {
    std::unique_lock lk(radio_->mu_);
    const auto deadline = Clock::now() + timeout;
    for (;;) {
      auto* rec = radio_->find_locked(mac_);
      if (!rec) return std::nullopt;
      if (!rec->discovery_events.empty()) {
        auto ev = rec->discovery_events.front();
        rec->discovery_events.pop_front();
        return ev;
      }
      if (radio_->discovery_cv_.wait_until(lk, deadline) == std::cv_status::timeout) {
        rec = radio_->find_locked(mac_);
        if (rec && !rec->discovery_events.empty()) continue;
        return std::nullopt;
      }
    }
  }

  /// Convenience: runs a full discovery and collects every found device.
  std::vector<RemoteDevice> discover(milliseconds duration) {
    std::vector<RemoteDevice> out;
    if (!start_discovery(duration)) return out;
    while (auto ev = next_discovery_event(duration + milliseconds(1000))) {
      if (ev->kind == DiscoveryEvent::Kind::kFinished) break;
      out.push_back(ev->device);
    }
    return out;
  }

  ServerSocket listen(Uuid uuid) {
    std::lock_guard lk(radio_->mu_);
    auto& rec = require_enabled_locked();
    auto core = std::make_shared<detail::ServerCore>();
    core->owner = mac_;
    core->uuid = uuid;
    rec.servers.push_back(core);
    radio_->trace_locked("listen " + mac_.to_string() + " " + uuid.to_string());
    return ServerSocket(radio_, core);
  }

  /// Cancels any discovery in progress, then connects. Blocks until the
  /// remote accepts, refuses, or the timeout elapses.
  LinkSocket connect(MacAddress remote, Uuid uuid, milliseconds timeout) {
    std::unique_lock lk(radio_->mu_);
    auto& rec = require_enabled_locked();
    radio_->cancel_discovery_locked(mac_, rec, " (connect)");
    const std::string edge = mac_.to_string() + " -> " + remote.to_string();

    auto* peer = radio_->find_locked(remote);
    if (!peer || !peer->enabled || remote == mac_ || !radio_->in_range_locked(mac_, remote)) {
      radio_->trace_locked("connect " + edge + " unreachable");
      throw LinkError(LinkErrc::kHostUnreachable, remote.to_string());
    }
    std::shared_ptr<detail::ServerCore> server;
    for (auto& s : peer->servers) {
      if (s->open && s->uuid == uuid) {
        server = s;
        break;
      }
    }
    if (!server) {
      radio_->trace_locked("connect " + edge + " refused");
      throw LinkError(LinkErrc::kConnectionRefused, uuid.to_string());
    }

    auto pending = std::make_shared<detail::PendingConnect>();
    pending->client = mac_;
    pending->channel = std::make_shared<detail::Channel>();
    pending->channel->latency = radio_->params_.latency;
    server->pending.push_back(pending);
    server->cv.notify_all();

    using Status = detail::PendingConnect::Status;
    const bool done = radio_->connect_cv_.wait_for(
        lk, timeout, [&] { return pending->status != Status::kWaiting; });
    if (!done) {
      auto& q = server->pending;
      q.erase(std::remove(q.begin(), q.end(), pending), q.end());
      radio_->trace_locked("connect " + edge + " timeout");
      throw LinkError(LinkErrc::kTimeout, remote.to_string());
    }
    if (pending->status == Status::kRefused) {
      radio_->trace_locked("connect " + edge + " refused");
      throw LinkError(LinkErrc::kConnectionRefused, uuid.to_string());
    }
    if (auto* self = radio_->find_locked(mac_)) self->bonded.insert(remote);
    if (auto* p = radio_->find_locked(remote)) p->bonded.insert(mac_);
    radio_->trace_locked("connect " + edge + " ok");
    return LinkSocket(pending->channel, 0, mac_, remote);
  }

 private:
  VirtualRadio::AdapterRecord& require_locked() const {
    auto* rec = radio_->find_locked(mac_);
    if (!rec) throw LinkError(LinkErrc::kNotSupported, mac_.to_string());
    return *rec;
  }

  VirtualRadio::AdapterRecord& require_enabled_locked() const {
    auto& rec = require_locked();
    if (!rec.enabled) throw LinkError(LinkErrc::kDisabled, mac_.to_string());
    return rec;
  }

  std::shared_ptr<VirtualRadio> radio_;
  MacAddress mac_;
};

/// absent when there is no adapter at all.
inline AdapterState adapter_state(const std::optional<Adapter>& adapter) {
  return adapter ? adapter->state() : AdapterState::kAbsent;
}

/// Throws not-supported when there is no adapter.
inline AdapterState request_enable(std::optional<Adapter>& adapter) {
  if (!adapter) throw LinkError(LinkErrc::kNotSupported, "no adapter");
  adapter->request_enable();
  return adapter->state();
}

// ---------------------------------------------------------------------------
// Out-of-line definitions
// ---------------------------------------------------------------------------

inline Adapter VirtualRadio::register_adapter(MacAddress mac, std::string friendly_name,
                                              bool enabled, Uuid service) {
  std::lock_guard lk(mu_);
  if (adapters_.count(mac)) {
    throw std::invalid_argument("duplicate MAC on radio: " + mac.to_string());
  }
  if (params_.default_in_range) {
    for (const auto& [other, rec] : adapters_) range_.insert(ordered(mac, other));
  }
  AdapterRecord rec;
  rec.friendly_name = std::move(friendly_name);
  rec.service = service;
  rec.enabled = enabled;
  adapters_.emplace(mac, std::move(rec));
  trace_locked("register " + mac.to_string());
  return Adapter(shared_from_this(), mac);
}

inline std::optional<Adapter> VirtualRadio::default_adapter(MacAddress mac) {
  std::lock_guard lk(mu_);
  if (!adapters_.count(mac)) return std::nullopt;
  return Adapter(shared_from_this(), mac);
}

inline LinkSocket ServerSocket::accept(milliseconds timeout) {
  if (!core_) throw LinkError(LinkErrc::kClosed);
  std::unique_lock lk(radio_->mu_);
  const auto deadline = Clock::now() + timeout;
  for (;;) {
    if (!core_->open) throw LinkError(LinkErrc::kClosed);
    if (!core_->pending.empty()) break;
    if (core_->cv.wait_until(lk, deadline) == std::cv_status::timeout && core_->open &&
        core_->pending.empty()) {
      throw LinkError(LinkErrc::kTimeout);
    }
  }
  auto pending = core_->pending.front();
  core_->pending.pop_front();
  pending->status = detail::PendingConnect::Status::kAccepted;
  radio_->trace_locked("accept " + core_->owner.to_string() + " <- " +
                       pending->client.to_string());
  radio_->connect_cv_.notify_all();
  return LinkSocket(pending->channel, 1, core_->owner, pending->client);
}

inline void ServerSocket::close() {
  if (!core_) return;
  std::lock_guard lk(radio_->mu_);
  if (!core_->open) return;
  core_->open = false;
  for (auto& p : core_->pending) p->status = detail::PendingConnect::Status::kRefused;
  core_->pending.clear();
  if (auto* rec = radio_->find_locked(core_->owner)) {
    auto& v = rec->servers;
    v.erase(std::remove(v.begin(), v.end(), core_), v.end());
  }
  radio_->trace_locked("server_close " + core_->owner.to_string());
  core_->cv.notify_all();
  radio_->connect_cv_.notify_all();
}

inline bool ServerSocket::is_open() const {
  if (!core_) return false;
  std::lock_guard lk(radio_->mu_);
  return core_->open;
}

}  // namespace homelink::bt
