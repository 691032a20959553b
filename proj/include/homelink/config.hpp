/*
 * config.hpp
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
 * @file config.hpp
 * @brief Gateway configuration: load, defaults, validation.
 */

#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "homelink/btlink.hpp"
#include "homelink/secmodel.hpp"
#include "homelink/wireproto.hpp"

namespace homelink::gw {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DeviceEntry {
  wire::DeviceClass device_class = wire::DeviceClass::kEntry;
  bt::MacAddress mac;
  std::string name;
  bt::Uuid uuid = bt::spp_uuid();
};

/// A credential is either a plaintext seed or a stored salt+digest pair.
struct CredentialSeed {
  std::optional<std::string> plain;
  std::optional<sec::Digest> digest;

  sec::Digest resolve() const { return digest ? *digest : sec::Digest::make(*plain); }

  static CredentialSeed from_json(const nlohmann::json& j, const std::string& what) {
    CredentialSeed s;
    if (j.is_string()) {
      s.plain = j.get<std::string>();
    } else if (j.is_object()) {
      try {
        s.digest = sec::Digest::from_json(j);
      } catch (const std::exception& e) {
        throw ConfigError(what + ": " + e.what());
      }
    } else {
      throw ConfigError(what + ": expected a string or {salt, digest}");
    }
    return s;
  }

  nlohmann::json to_json() const { return digest ? digest->to_json() : nlohmann::json(*plain); }
};

struct Credentials {
  std::string app_user = "admin";
  CredentialSeed app_password{"homelink", std::nullopt};
  CredentialSeed door_bt_enable{"1234", std::nullopt};
  CredentialSeed door_lock{"2580", std::nullopt};
  CredentialSeed car_lock{"1111", std::nullopt};
  CredentialSeed car_unlock{"2222", std::nullopt};
  CredentialSeed reset_code{"999999", std::nullopt};

  std::shared_ptr<sec::CredentialStore> build_store() const {
    auto s = std::make_shared<sec::CredentialStore>();
    s->set_app_login(app_user, app_password.resolve());
    s->set_device_password(sec::Purpose::kDoorBtEnable, door_bt_enable.resolve());
    s->set_device_password(sec::Purpose::kDoorLock, door_lock.resolve());
    s->set_device_password(sec::Purpose::kCarLock, car_lock.resolve());
    s->set_device_password(sec::Purpose::kCarUnlock, car_unlock.resolve());
    s->set_reset_code(reset_code.resolve());
    return s;
  }
};

enum class ClockMode { kManual, kRealtime };

struct GatewayConfig {
  std::vector<DeviceEntry> devices;
  Credentials credentials;
  sec::AlertRecipients recipients{"+8801700000001", "+8801700000999"};
  std::string sms_template{sec::kDefaultSmsTemplate};
  double mains_hz = 50.0;
  std::int64_t pulse_ms = 300;
  std::int64_t temp_conversion_ms = 0;
  std::string listen_host = "127.0.0.1";
  int raw_port = 7070;
  int json_port = 7071;
  std::filesystem::path data_dir = "homelink-data";
  ClockMode clock = ClockMode::kRealtime;
  std::size_t snapshot_every = 100;
  std::uintmax_t rotate_bytes = 8u << 20;

  static GatewayConfig defaults() {
    GatewayConfig c;
    c.devices = {
        {wire::DeviceClass::kEntry, *bt::MacAddress::parse("00:21:13:00:00:01"), "HC-06 Door",
         bt::spp_uuid()},
        {wire::DeviceClass::kAutomation, *bt::MacAddress::parse("00:21:13:00:00:02"),
         "HC-06 Room", bt::spp_uuid()},
        {wire::DeviceClass::kCar, *bt::MacAddress::parse("00:21:13:00:00:03"), "HC-06 Car",
         bt::spp_uuid()},
    };
    return c;
  }

  const DeviceEntry& device(wire::DeviceClass c) const {
    for (const auto& d : devices) {
      if (d.device_class == c) return d;
    }
    throw ConfigError("no device of class " + std::string(wire::device_class_name(c)));
  }

  /// Throws ConfigError naming the first violated rule.
  void validate() const {
    if (recipients.owner.empty() || recipients.police.empty()) {
      throw ConfigError("sms recipients: owner and police must both be set");
    }
    if (recipients.owner == recipients.police) {
      throw ConfigError("sms recipients: owner and police must differ");
    }
    std::set<bt::MacAddress> macs;
    std::set<wire::DeviceClass> classes;
    for (const auto& d : devices) {
      if (!macs.insert(d.mac).second) throw ConfigError("devices: duplicate mac " + d.mac.to_string());
      if (!classes.insert(d.device_class).second) {
        throw ConfigError("devices: more than one " +
                          std::string(wire::device_class_name(d.device_class)) + " device");
      }
    }
    if (classes.size() != 3) throw ConfigError("devices: need exactly one entry, automation and car device");
    if (!(mains_hz > 0)) throw ConfigError("mains_hz must be positive");
    if (pulse_ms <= 0) throw ConfigError("pulse_ms must be positive");
    if (temp_conversion_ms < 0) throw ConfigError("temp_conversion_ms must not be negative");
    if (raw_port < 0 || raw_port > 65535 || json_port < 0 || json_port > 65535) {
      throw ConfigError("listen: port out of range");
    }
    if (credentials.app_user.empty()) throw ConfigError("credentials: app user must be set");
  }

  static GatewayConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  static GatewayConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config " + path.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config " + path.string() + ": " + e.what());
    }
    auto c = from_json(j);
    if (c.data_dir.is_relative()) c.data_dir = path.parent_path() / c.data_dir;
    return c;
  }

  /// Explicit path wins, then HOMELINK_CONFIG, then built-in defaults.
  static GatewayConfig resolve(const std::optional<std::filesystem::path>& explicit_path) {
    if (explicit_path) return load(*explicit_path);
    if (const char* env = std::getenv("HOMELINK_CONFIG"); env && *env) return load(env);
    return defaults();
  }
};

inline std::optional<wire::DeviceClass> parse_device_class(std::string_view s) {
  if (s == "entry" || s == "door") return wire::DeviceClass::kEntry;
  if (s == "automation" || s == "room") return wire::DeviceClass::kAutomation;
  if (s == "car") return wire::DeviceClass::kCar;
  return std::nullopt;
}

inline GatewayConfig GatewayConfig::from_json(const nlohmann::json& j) {
  auto c = defaults();
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  static const std::set<std::string> known = {
      "devices", "credentials", "sms",   "mains_hz",       "pulse_ms",    "temp_conversion_ms",
      "listen",  "data_dir",    "clock", "snapshot_every", "rotate_bytes"};
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) throw ConfigError("config: unknown key \"" + k + "\"");
  }
  try {
    if (j.contains("devices")) {
      c.devices.clear();
      for (const auto& d : j.at("devices")) {
        DeviceEntry e;
        const auto cls = d.at("class").get<std::string>();
        auto dc = parse_device_class(cls);
        if (!dc) throw ConfigError("devices: unknown class " + cls);
        e.device_class = *dc;
        const auto mac = d.at("mac").get<std::string>();
        auto m = bt::MacAddress::parse(mac);
        if (!m) throw ConfigError("devices: bad mac " + mac);
        e.mac = *m;
        e.name = d.value("name", std::string(wire::device_class_name(*dc)));
        if (d.contains("uuid")) {
          auto u = bt::Uuid::parse(d["uuid"].get<std::string>());
          if (!u) throw ConfigError("devices: bad uuid");
          e.uuid = *u;
        }
        c.devices.push_back(e);
      }
    }
    if (j.contains("credentials")) {
      const auto& cr = j["credentials"];
      if (cr.contains("app")) {
        c.credentials.app_user = cr["app"].value("user", c.credentials.app_user);
        if (cr["app"].contains("password")) {
          c.credentials.app_password = CredentialSeed::from_json(cr["app"]["password"], "app.password");
        }
      }
      auto seed = [&](const char* key, CredentialSeed& out) {
        if (cr.contains(key)) out = CredentialSeed::from_json(cr[key], key);
      };
      seed("door_bt_enable", c.credentials.door_bt_enable);
      seed("door_lock", c.credentials.door_lock);
      seed("car_lock", c.credentials.car_lock);
      seed("car_unlock", c.credentials.car_unlock);
      seed("reset_code", c.credentials.reset_code);
    }
    if (j.contains("sms")) {
      c.recipients.owner = j["sms"].value("owner", c.recipients.owner);
      c.recipients.police = j["sms"].value("police", c.recipients.police);
      c.sms_template = j["sms"].value("template", c.sms_template);
    }
    c.mains_hz = j.value("mains_hz", c.mains_hz);
    c.pulse_ms = j.value("pulse_ms", c.pulse_ms);
    c.temp_conversion_ms = j.value("temp_conversion_ms", c.temp_conversion_ms);
    if (j.contains("listen")) {
      c.listen_host = j["listen"].value("host", c.listen_host);
      c.raw_port = j["listen"].value("raw_port", c.raw_port);
      c.json_port = j["listen"].value("json_port", c.json_port);
    }
    if (j.contains("data_dir")) c.data_dir = j["data_dir"].get<std::string>();
    if (j.contains("clock")) {
      const auto m = j["clock"].get<std::string>();
      if (m == "manual") {
        c.clock = ClockMode::kManual;
      } else if (m == "realtime") {
        c.clock = ClockMode::kRealtime;
      } else {
        throw ConfigError("clock must be manual or realtime");
      }
    }
    c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
    c.rotate_bytes = j.value("rotate_bytes", c.rotate_bytes);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline nlohmann::json GatewayConfig::to_json() const {
  nlohmann::json devs = nlohmann::json::array();
  for (const auto& d : devices) {
    devs.push_back({{"class", wire::device_class_name(d.device_class)},
                    {"mac", d.mac.to_string()},
                    {"name", d.name},
                    {"uuid", d.uuid.to_string()}});
  }
  return {{"devices", devs},
          {"credentials",
           {{"app", {{"user", credentials.app_user}, {"password", credentials.app_password.to_json()}}},
            {"door_bt_enable", credentials.door_bt_enable.to_json()},
            {"door_lock", credentials.door_lock.to_json()},
            {"car_lock", credentials.car_lock.to_json()},
            {"car_unlock", credentials.car_unlock.to_json()},
            {"reset_code", credentials.reset_code.to_json()}}},
          {"sms", {{"owner", recipients.owner}, {"police", recipients.police}, {"template", sms_template}}},
          {"mains_hz", mains_hz},
          {"pulse_ms", pulse_ms},
          {"temp_conversion_ms", temp_conversion_ms},
          {"listen", {{"host", listen_host}, {"raw_port", raw_port}, {"json_port", json_port}}},
          {"data_dir", data_dir.string()},
          {"clock", clock == ClockMode::kManual ? "manual" : "realtime"},
          {"snapshot_every", snapshot_every},
          {"rotate_bytes", rotate_bytes}};
}

}  // namespace homelink::gw
