/*
 * json_api.hpp
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
 * @file json_api.hpp
 * @brief Request handler for the JSON plane. See PROTOCOL.md.
 *
 * Transport-free: the HTTP server and the scenario runner both feed it.
 */

#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "homelink/gateway.hpp"

namespace homelink::gw {

inline json reply_for(const wire::Response& r) {
  json j = response_to_json(r);
  const std::string name = j["response"];
  j.erase("response");
  if (name == "temp_report") {
    j["reply"] = "temp";
  } else if (name == "status_report") {
    j["reply"] = "status";
  } else {
    j["reply"] = name;
  }
  return j;
}

inline json error_reply(std::string_view code, std::string_view message) {
  return {{"reply", "error"}, {"error", code}, {"message", message}};
}

class JsonApi {
 public:
  explicit JsonApi(Gateway& gw) : gw_(gw) {}

  json handle(const json& req) {
    if (!req.is_object() || !req.contains("op") || !req["op"].is_string()) {
      return error_reply("bad_request", "request must be an object with a string \"op\"");
    }
    const std::string op = req["op"];
    try {
      return route(op, req);
    } catch (const GatewayError& e) {
      return error_reply(e.code(), e.what());
    } catch (const json::exception& e) {
      return error_reply("bad_request", e.what());
    }
  }

 private:
  json route(const std::string& op, const json& req) {
    if (op == "login") {
      auto r = gw_.login(req.at("user").get<std::string>(), req.at("password").get<std::string>(),
                         Transport::kJson);
      if (!r.ok) return error_reply("login", r.message);
      return {{"reply", "ok"}, {"session", r.token}};
    }

    const std::string token = req.value("session", "");
    if (token.empty()) return error_reply("no_session", "login first");
    gw_.session_number(token);  // validates

    if (op == "logout") {
      gw_.close_session(token);
      return {{"reply", "ok"}};
    }
    if (op == "attach") {
      auto cls = device_arg(req);
      std::optional<bt::MacAddress> mac;
      std::optional<bt::Uuid> uuid;
      if (req.contains("mac")) {
        mac = bt::MacAddress::parse(req["mac"].get<std::string>());
        if (!mac) return error_reply("bad_arg", "bad mac");
      }
      if (req.contains("uuid")) {
        uuid = bt::Uuid::parse(req["uuid"].get<std::string>());
        if (!uuid) return error_reply("bad_arg", "bad uuid");
      }
      auto r = gw_.attach(token, cls, mac, uuid);
      return {{"reply", attach_result_name(r)}, {"device", wire::device_class_name(cls)}};
    }
    if (op == "detach") {
      gw_.detach(token);
      return {{"reply", "ok"}};
    }
    if (op == "auth") return command(token, wire::Auth{req.at("password").get<std::string>()});
    if (op == "lock") return command(token, wire::Lock{});
    if (op == "unlock") return command(token, wire::Unlock{});
    if (op == "light") {
      const int id = req.at("id").get<int>();
      if (id < 0 || id > 255) return error_reply("bad_arg", "light id out of range");
      return command(token, wire::LightSet{static_cast<std::uint8_t>(id), req.at("on").get<bool>()});
    }
    if (op == "fan_set") return command(token, wire::FanSet{req.at("on").get<bool>()});
    if (op == "fan_step") {
      const int d = req.at("delta").get<int>();
      if (d < -128 || d > 127) return error_reply("bad_arg", "delta out of range");
      auto r = command(token, wire::FanStep{static_cast<std::int8_t>(d)});
      if (r["reply"] == "ack") r["toast"] = fan_toast(static_cast<std::int8_t>(d));
      return r;
    }
    if (op == "temp") return command(token, wire::TempQuery{});
    if (op == "status") return command(token, wire::StatusQuery{});
    if (op == "reset") {
      const auto code = req.at("code").get<std::string>();
      std::optional<wire::DeviceClass> cls;
      if (req.contains("device")) cls = device_arg(req);
      const auto attached = gw_.attached_device(token);
      if (attached && (!cls || cls == attached)) return command(token, wire::ResetAuth{code});
      if (!cls) return error_reply("bad_arg", "reset needs a device when not attached");
      auto r = gw_.inject_reset(*cls, code);
      return {{"reply", r == sec::ResetOutcome::kStillCollapsed ? "collapsed" : "ack"},
              {"outcome", reset_outcome_name(r)}};
    }
    if (op == "inject") return inject(req);
    if (op == "advance") {
      gw_.advance_to(req.at("t").get<SimMillis>());
      return {{"reply", "ok"}, {"t", gw_.clock().now()}};
    }
    if (op == "devices") return {{"reply", "devices"}, {"devices", gw_.devices()}};
    if (op == "scan") {
      const auto ms = req.value("duration_ms", 100);
      json found = json::array();
      for (const auto& d : gw_.scan(token, std::chrono::milliseconds(ms))) {
        found.push_back({{"mac", d.mac.to_string()},
                         {"name", d.friendly_name},
                         {"uuid", d.service.to_string()}});
      }
      return {{"reply", "scan"}, {"found", found}};
    }
    if (op == "events") {
      const auto since = req.value("since", std::uint64_t{0});
      const auto wait = std::min(req.value("timeout_ms", 0), 30000);
      auto evs = gw_.log().since(since, std::chrono::milliseconds(wait));
      return {{"reply", "events"}, {"events", evs}, {"last_seq", gw_.log().last_seq()}};
    }
    return error_reply("unknown_op", "unknown op " + op);
  }

  json inject(const json& req) {
    const std::string kind = req.at("kind");
    if (kind == "keypad") {
      auto r = gw_.inject_keypad(req.at("keys").get<std::string>());
      r["reply"] = "ok";
      return r;
    }
    if (kind == "ambient") {
      auto r = gw_.inject_ambient(req.at("celsius").get<double>());
      r["reply"] = "ok";
      return r;
    }
    if (kind == "reset") {
      auto r = gw_.inject_reset(device_arg(req), req.at("code").get<std::string>());
      return {{"reply", "ok"}, {"outcome", reset_outcome_name(r)}};
    }
    return error_reply("bad_arg", "unknown inject kind " + kind);
  }

  json command(const std::string& token, const wire::Command& cmd) {
    return reply_for(gw_.dispatch(token, cmd));
  }

  static wire::DeviceClass device_arg(const json& req) {
    const std::string name = req.at("device");
    auto cls = parse_device_class(name);
    if (!cls) throw GatewayError("bad_device", "unknown device " + name);
    return *cls;
  }

  Gateway& gw_;
};

}  // namespace homelink::gw
