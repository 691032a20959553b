/*
 * event_log.hpp
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
 * @file event_log.hpp
 * @brief Append-only JSON-lines event log with snapshots and replay.
 *
 * Layout of the data directory:
 *
 *     events.jsonl          current segment, one event per line
 *     events-<seq>.jsonl    rotated segments, named by their last seq
 *     snapshot.json         {"seq", "t", "devices": {name: state}}
 *
 * "state" events carry a device's full snapshot, so recovery is: load
 * snapshot.json, then replay every later line of events.jsonl.
 */

#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "homelink/sim_clock.hpp"

namespace homelink::gw {

namespace fs = std::filesystem;

struct RecoveredState {
  std::uint64_t seq = 0;
  SimMillis t = 0;
  std::map<std::string, nlohmann::json> devices;
  std::size_t replayed = 0;        // lines applied on top of the snapshot
  bool dropped_partial_line = false;
};

class EventLog {
 public:
  static constexpr std::size_t kRingSize = 4096;

  struct Options {
    std::size_t snapshot_every = 100;
    std::uintmax_t rotate_bytes = 8u << 20;
  };

  /// Opens (creating the directory if needed), recovers, and rotates an
  /// oversized segment.
  EventLog(fs::path dir, Options opts) : dir_(std::move(dir)), opts_(opts) {
    fs::create_directories(dir_);
    recovered_ = recover(dir_);
    seq_ = recovered_.seq;
    last_t_ = recovered_.t;
    devices_ = recovered_.devices;
    if (fs::exists(segment_path()) && fs::file_size(segment_path()) > opts_.rotate_bytes) {
      rotate_locked();
    }
    out_.open(segment_path(), std::ios::app);
    if (!out_) throw std::runtime_error("cannot open event log in " + dir_.string());
  }

  ~EventLog() {
    std::lock_guard lk(mu_);
    closed_ = true;
    cv_.notify_all();
  }

  const RecoveredState& recovered() const { return recovered_; }
  const fs::path& dir() const { return dir_; }
  fs::path segment_path() const { return dir_ / "events.jsonl"; }

  /// Stamps seq and t onto `event` (which must carry "event"), persists it,
  /// and publishes it to readers. Returns the stamped record.
  nlohmann::json append(nlohmann::json event, SimMillis t) {
    std::lock_guard lk(mu_);
    event["seq"] = ++seq_;
    event["t"] = t;
    last_t_ = t;
    out_ << event.dump() << '\n';
    out_.flush();
    if (!out_) throw std::runtime_error("event log write failed");
    if (event.value("event", "") == "state" && event.contains("device")) {
      devices_[event["device"].get<std::string>()] = event.at("state");
    }
    ring_.push_back(event);
    if (ring_.size() > kRingSize) ring_.pop_front();
    if (opts_.snapshot_every && seq_ % opts_.snapshot_every == 0) write_snapshot_locked();
    cv_.notify_all();
    return event;
  }

  std::uint64_t last_seq() const {
    std::lock_guard lk(mu_);
    return seq_;
  }

  std::map<std::string, nlohmann::json> device_states() const {
    std::lock_guard lk(mu_);
    return devices_;
  }

  /// Events with seq > after still held in memory, waiting up to `timeout`
  /// for at least one to arrive.
  std::vector<nlohmann::json> since(std::uint64_t after, std::chrono::milliseconds timeout) {
    std::unique_lock lk(mu_);
    cv_.wait_for(lk, timeout, [&] { return closed_ || seq_ > after; });
    std::vector<nlohmann::json> out;
    for (const auto& e : ring_) {
      if (e["seq"].get<std::uint64_t>() > after) out.push_back(e);
    }
    return out;
  }

  void snapshot_now() {
    std::lock_guard lk(mu_);
    write_snapshot_locked();
  }

  void rotate() {
    std::lock_guard lk(mu_);
    out_.close();
    rotate_locked();
    out_.open(segment_path(), std::ios::app);
  }

  /// Reads a data directory without opening it for writing.
  static RecoveredState recover(const fs::path& dir) {
    RecoveredState r;
    const auto snap = dir / "snapshot.json";
    if (fs::exists(snap)) {
      std::ifstream in(snap);
      auto j = nlohmann::json::parse(in);
      r.seq = j.at("seq").get<std::uint64_t>();
      r.t = j.at("t").get<SimMillis>();
      for (auto& [k, v] : j.at("devices").items()) r.devices[k] = v;
    }
    std::ifstream in(dir / "events.jsonl");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json e;
      try {
        e = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error&) {
        // Only a torn final write can leave a partial line behind.
        r.dropped_partial_line = true;
        break;
      }
      const auto seq = e.at("seq").get<std::uint64_t>();
      if (seq <= r.seq) continue;
      r.seq = seq;
      r.t = e.at("t").get<SimMillis>();
      if (e.value("event", "") == "state") r.devices[e.at("device").get<std::string>()] = e.at("state");
      ++r.replayed;
    }
    return r;
  }

  /// Every line of every segment, oldest first.
  static std::vector<nlohmann::json> read_all(const fs::path& dir) {
    std::vector<std::pair<std::uint64_t, fs::path>> segs;
    for (const auto& ent : fs::directory_iterator(dir)) {
      const auto name = ent.path().filename().string();
      if (name.rfind("events-", 0) == 0 && ent.path().extension() == ".jsonl") {
        segs.emplace_back(std::stoull(name.substr(7)), ent.path());
      }
    }
    std::sort(segs.begin(), segs.end());
    segs.emplace_back(UINT64_MAX, dir / "events.jsonl");
    std::vector<nlohmann::json> out;
    for (const auto& [_, p] : segs) {
      std::ifstream in(p);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
          out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error&) {
          break;
        }
      }
    }
    return out;
  }

 private:
  void write_snapshot_locked() {
    nlohmann::json j = {{"seq", seq_}, {"t", last_t_}, {"devices", devices_}};
    const auto tmp = dir_ / "snapshot.json.tmp";
    {
      std::ofstream o(tmp, std::ios::trunc);
      o << j.dump(2) << '\n';
      if (!o) throw std::runtime_error("snapshot write failed");
    }
    fs::rename(tmp, dir_ / "snapshot.json");
  }

  // The snapshot is written first so the rotated segment is never needed
  // for recovery.
  void rotate_locked() {
    write_snapshot_locked();
    if (fs::exists(segment_path())) {
      fs::rename(segment_path(), dir_ / ("events-" + std::to_string(seq_) + ".jsonl"));
    }
  }

  fs::path dir_;
  Options opts_;
  RecoveredState recovered_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::ofstream out_;
  std::uint64_t seq_ = 0;
  SimMillis last_t_ = 0;
  std::map<std::string, nlohmann::json> devices_;
  std::deque<nlohmann::json> ring_;
  bool closed_ = false;
};

}  // namespace homelink::gw
