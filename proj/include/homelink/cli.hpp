/*
 * cli.hpp
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
 * @file cli.hpp
 * @brief The `homelink` command line: gateway, ctl, inject, scenario.
 *
 * Exit codes:
 *   0   Ack, TempReport, StatusReport, or a successful non-device command
 *   1   scenario failed (expectation mismatch or golden mismatch)
 *   2   Nack
 *   3   Collapsed
 *   4   transport error: gateway unreachable, login refused, attach not
 *       granted, link dropped
 *   64  usage
 *   65  scenario parse error
 */

#pragma once

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "homelink/gateway.hpp"
#include "homelink/scenario.hpp"
#include "homelink/server.hpp"

namespace homelink::cli {

using nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitNack = 2;
inline constexpr int kExitCollapsed = 3;
inline constexpr int kExitTransport = 4;
inline constexpr int kExitUsage = 64;
inline constexpr int kExitDataErr = 65;

inline int exit_code_for(const wire::Response& r) {
  return std::visit(
      [](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, wire::Nack>) {
          return kExitNack;
        } else if constexpr (std::is_same_v<T, wire::Collapsed>) {
          return kExitCollapsed;
        } else {
          return kExitOk;
        }
      },
      r);
}

class TransportError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return (v && *v) ? std::string(v) : std::move(fallback);
}

/// Thin JSON-plane client; one request in flight at a time.
class ApiClient {
 public:
  explicit ApiClient(const std::string& addr) : addr_(addr), http_(base_url(addr)) {
    http_.set_connection_timeout(std::chrono::seconds(2));
    http_.set_read_timeout(std::chrono::seconds(15));
  }

  json call(json req) {
    if (!token_.empty() && !req.contains("session")) req["session"] = token_;
    auto res = http_.Post("/api", req.dump(), "application/json");
    if (!res) {
      throw TransportError("cannot reach gateway at " + addr_ + ": " + httplib::to_string(res.error()));
    }
    if (res->status != 200) {
      throw TransportError("gateway answered HTTP " + std::to_string(res->status));
    }
    try {
      return json::parse(res->body);
    } catch (const json::parse_error&) {
      throw TransportError("gateway sent a non-JSON body");
    }
  }

  void login() {
    auto r = call({{"op", "login"},
                   {"user", env_or("HOMELINK_USER", "admin")},
                   {"password", env_or("HOMELINK_PASS", "homelink")}});
    if (r.value("reply", "") != "ok") throw TransportError("login: " + r.value("message", "refused"));
    token_ = r["session"].get<std::string>();
  }

  void attach(const std::string& device) {
    auto r = call({{"op", "attach"}, {"device", device}});
    const std::string reply = r.value("reply", "");
    if (reply == "error") throw TransportError("attach " + device + ": " + r.value("message", ""));
    if (reply != "attached") throw TransportError("attach " + device + ": " + reply);
  }

  /// Best effort; the gateway drops the session's link on logout anyway.
  void logout() noexcept {
    if (token_.empty()) return;
    try {
      call({{"op", "detach"}});
      call({{"op", "logout"}});
    } catch (...) {
    }
    token_.clear();
  }

 private:
  static std::string base_url(const std::string& addr) {
    return addr.find("://") == std::string::npos ? "http://" + addr : addr;
  }

  std::string addr_;
  httplib::Client http_;
  std::string token_;
};

/// Prints one reply from the JSON plane and maps it to an exit code.
inline int render_reply(const json& r, std::ostream& out, std::ostream& err) {
  const std::string reply = r.value("reply", "");
  if (reply == "ack") {
    out << "ack";
    if (r.contains("outcome")) out << " (" << r["outcome"].get<std::string>() << ")";
    out << "\n";
    if (r.contains("toast")) out << "toast: " << r["toast"].get<std::string>() << "\n";
    return kExitOk;
  }
  if (reply == "nack") {
    out << "nack: " << r.value("reason", "?") << "\n";
    return kExitNack;
  }
  if (reply == "collapsed") {
    out << "COLLAPSED\n";
    return kExitCollapsed;
  }
  if (reply == "temp") {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f C", r["temp_c"].get<double>());
    out << buf << "\n";
    return kExitOk;
  }
  if (reply == "status") {
    auto onoff = [](bool b) { return b ? "on" : "off"; };
    out << "light1=" << onoff(r["light1"].get<bool>()) << " light2=" << onoff(r["light2"].get<bool>())
        << " fan=" << onoff(r["fan_on"].get<bool>()) << " level=" << r["fan_level"].get<int>()
        << " lock=" << r["lock"].get<std::string>() << "\n";
    return kExitOk;
  }
  if (reply == "error") {
    err << "error: " << r.value("error", "?") << ": " << r.value("message", "") << "\n";
    return kExitTransport;
  }
  out << r.dump() << "\n";
  return kExitOk;
}

namespace detail {

inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> f{false};
  return f;
}

inline void on_stop_signal(int) { stop_flag() = true; }

inline int gateway_run(const std::string& config_path, const std::string& clock, std::ostream& out,
                       std::ostream& err) {
  gw::GatewayConfig cfg;
  try {
    cfg = gw::GatewayConfig::resolve(config_path.empty() ? std::nullopt
                                                         : std::optional<std::filesystem::path>(config_path));
    if (clock == "manual") cfg.clock = gw::ClockMode::kManual;
    if (clock == "realtime") cfg.clock = gw::ClockMode::kRealtime;
    cfg.validate();
  } catch (const std::exception& e) {
    err << "config: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    gw::Gateway gw(cfg);
    gw::RawServer raw(gw, cfg.listen_host, cfg.raw_port);
    gw::HttpServer http(gw, cfg.listen_host, cfg.json_port);
    out << "homelink gateway: raw " << cfg.listen_host << ":" << raw.port() << ", json "
        << cfg.listen_host << ":" << http.port() << ", data " << cfg.data_dir.string() << std::endl;
    stop_flag() = false;
    std::signal(SIGINT, on_stop_signal);
    std::signal(SIGTERM, on_stop_signal);
    while (!stop_flag()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    out << "shutting down" << std::endl;
    http.stop();
    raw.stop();
    gw.shutdown();
  } catch (const std::exception& e) {
    err << "gateway: " << e.what() << "\n";
    return kExitTransport;
  }
  return kExitOk;
}

/// login, optional attach, the requests in order, detach, logout. Stops at
/// the first reply that is not an Ack and returns it (else the last one).
inline json run_requests(const std::string& addr, const std::optional<std::string>& device,
                         const std::vector<json>& requests) {
  ApiClient api(addr);
  try {
    api.login();
    if (device) api.attach(*device);
    json last;
    for (const auto& req : requests) {
      last = api.call(req);
      if (last.value("reply", "") != "ack") break;
    }
    api.logout();
    return last;
  } catch (...) {
    api.logout();
    throw;
  }
}

inline int device_session(const std::string& addr, const std::optional<std::string>& device,
                          const std::vector<json>& requests, std::ostream& out, std::ostream& err) {
  try {
    return render_reply(run_requests(addr, device, requests), out, err);
  } catch (const TransportError& e) {
    err << "error: " << e.what() << "\n";
    return kExitTransport;
  }
}

inline int scenario_play(const std::string& file, const std::string& golden,
                         const std::string& config_path, std::ostream& out, std::ostream& err) {
  std::vector<scn::Step> steps;
  {
    std::ifstream in(file);
    if (!in) {
      err << "scenario: cannot open " << file << "\n";
      return kExitUsage;
    }
    try {
      steps = scn::parse(in);
    } catch (const scn::ScenarioParseError& e) {
      err << file << ": " << e.what() << "\n";
      return kExitDataErr;
    }
  }
  auto cfg = gw::GatewayConfig::defaults();
  if (!config_path.empty()) {
    try {
      cfg = gw::GatewayConfig::load(config_path);
    } catch (const std::exception& e) {
      err << "config: " << e.what() << "\n";
      return kExitUsage;
    }
  }
  scn::Report rep;
  try {
    rep = scn::play(steps, cfg);
  } catch (const std::exception& e) {
    err << "scenario: " << e.what() << "\n";
    return kExitFail;
  }
  out << rep.transcript;
  if (!rep.passed) return kExitFail;
  if (!golden.empty()) {
    std::ifstream g(golden);
    if (!g) {
      err << "golden: cannot open " << golden << "\n";
      return kExitUsage;
    }
    std::stringstream want;
    want << g.rdbuf();
    if (want.str() != rep.transcript) {
      std::istringstream a(want.str()), b(rep.transcript);
      std::string la, lb;
      int n = 0;
      while (true) {
        ++n;
        const bool ga = static_cast<bool>(std::getline(a, la));
        const bool gb = static_cast<bool>(std::getline(b, lb));
        if (!ga && !gb) break;
        if (!ga || !gb || la != lb) {
          err << "golden mismatch at line " << n << "\n  want: " << (ga ? la : "<eof>")
              << "\n  got:  " << (gb ? lb : "<eof>") << "\n";
          break;
        }
      }
      return kExitFail;
    }
    out << "golden: match\n";
  }
  return kExitOk;
}

}  // namespace detail

/// Runs one command line. `args` excludes the program name.
inline int cli_execute(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"homelink: gateway, device control and scenarios", "homelink"};
  app.require_subcommand(1);
  std::string addr = env_or("HOMELINK_ADDR", "127.0.0.1:7071");

  // gateway run
  auto* gateway = app.add_subcommand("gateway", "Run the gateway")->require_subcommand(1);
  auto* g_run = gateway->add_subcommand("run", "Serve the raw and JSON planes until SIGINT/SIGTERM");
  std::string config_path, clock_mode;
  g_run->add_option("--config", config_path, "Config file (else $HOMELINK_CONFIG, else defaults)");
  g_run->add_option("--clock", clock_mode, "Override the clock mode")
      ->check(CLI::IsMember({"manual", "realtime"}));

  // ctl
  auto* ctl = app.add_subcommand("ctl", "Send commands through a running gateway")->require_subcommand(1);
  ctl->add_option("--addr", addr, "Gateway JSON plane host:port (default $HOMELINK_ADDR)");
  std::string device, password, code, action, keys;
  int light_id = 0;
  double celsius = 0;

  auto* c_attach = ctl->add_subcommand("attach", "Check that a device can be attached");
  c_attach->add_option("device", device)->required();
  auto* c_auth = ctl->add_subcommand("auth", "Authenticate against a device");
  c_auth->add_option("device", device)->required();
  c_auth->add_option("--password,-p", password)->required();
  auto* c_door = ctl->add_subcommand("door", "Authenticate at the entry, then lock or unlock");
  c_door->add_option("action", action)->required()->check(CLI::IsMember({"lock", "unlock"}));
  c_door->add_option("--password,-p", password)->required();
  auto* c_light = ctl->add_subcommand("light", "Switch a room light");
  c_light->add_option("id", light_id)->required();
  c_light->add_option("state", action)->required()->check(CLI::IsMember({"on", "off"}));
  auto* c_fan = ctl->add_subcommand("fan", "Switch or step the fan");
  c_fan->add_option("action", action)->required()->check(CLI::IsMember({"on", "off", "up", "down"}));
  auto* c_temp = ctl->add_subcommand("temp", "Read the room temperature");
  auto* c_status = ctl->add_subcommand("status", "Read a device's status report");
  c_status->add_option("device", device)->required();
  auto* c_car = ctl->add_subcommand("car", "Send a car lock or unlock password");
  c_car->add_option("action", action)->required()->check(CLI::IsMember({"lock", "unlock"}));
  c_car->add_option("--password,-p", password)->required();
  auto* c_reset = ctl->add_subcommand("reset", "Authorized reset of a collapsed device");
  c_reset->add_option("device", device)->required();
  c_reset->add_option("--code,-c", code)->required();
  auto* c_devices = ctl->add_subcommand("devices", "List devices and their state");

  // inject
  auto* inject = app.add_subcommand("inject", "Inject sensor or keypad input")->require_subcommand(1);
  inject->add_option("--addr", addr, "Gateway JSON plane host:port (default $HOMELINK_ADDR)");
  auto* i_ambient = inject->add_subcommand("ambient", "Set the room's ambient temperature");
  i_ambient->add_option("celsius", celsius)->required();
  auto* i_keypad = inject->add_subcommand("keypad", "Press keys on the entry keypad");
  i_keypad->add_option("keys", keys)->required();

  // scenario play
  auto* scenario = app.add_subcommand("scenario", "Scripted scenarios")->require_subcommand(1);
  auto* s_play = scenario->add_subcommand("play", "Play a scenario against a fresh gateway");
  std::string scn_file, golden, scn_config;
  s_play->add_option("file", scn_file)->required();
  s_play->add_option("--golden", golden, "Compare the transcript with this file");
  s_play->add_option("--config", scn_config, "Devices, credentials and recipients");

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n" << "run 'homelink --help' for usage\n";
    return kExitUsage;
  }

  if (g_run->parsed()) return detail::gateway_run(config_path, clock_mode, out, err);
  if (s_play->parsed()) return detail::scenario_play(scn_file, golden, scn_config, out, err);

  auto device_name = [&]() -> std::optional<std::string> {
    auto cls = gw::parse_device_class(device);
    if (!cls) return std::nullopt;
    return std::string(wire::device_class_name(*cls));
  };
  auto bad_device = [&] {
    err << "unknown device '" << device << "' (entry|door, automation|room, car)\n";
    return kExitUsage;
  };

  if (c_attach->parsed()) {
    auto d = device_name();
    if (!d) return bad_device();
    ApiClient api(addr);
    try {
      api.login();
      api.attach(*d);
      api.logout();
      out << "attached " << *d << "\n";
      return kExitOk;
    } catch (const TransportError& e) {
      api.logout();
      err << "error: " << e.what() << "\n";
      return kExitTransport;
    }
  }
  if (c_auth->parsed()) {
    auto d = device_name();
    if (!d) return bad_device();
    return detail::device_session(addr, d, {{{"op", "auth"}, {"password", password}}}, out, err);
  }
  if (c_door->parsed()) {
    return detail::device_session(addr, "entry",
                                  {{{"op", "auth"}, {"password", password}}, {{"op", action}}}, out, err);
  }
  if (c_light->parsed()) {
    return detail::device_session(addr, "automation",
                                  {{{"op", "light"}, {"id", light_id}, {"on", action == "on"}}}, out, err);
  }
  if (c_fan->parsed()) {
    json req = (action == "on" || action == "off")
                   ? json{{"op", "fan_set"}, {"on", action == "on"}}
                   : json{{"op", "fan_step"}, {"delta", action == "up" ? 1 : -1}};
    return detail::device_session(addr, "automation", {req}, out, err);
  }
  if (c_temp->parsed()) return detail::device_session(addr, "automation", {{{"op", "temp"}}}, out, err);
  if (c_status->parsed()) {
    auto d = device_name();
    if (!d) return bad_device();
    return detail::device_session(addr, d, {{{"op", "status"}}}, out, err);
  }
  if (c_car->parsed()) {
    // The car picks the direction from whichever password matched; the verb
    // is only checked against the resulting actuator state.
    json r;
    try {
      r = detail::run_requests(addr, "car", {{{"op", "auth"}, {"password", password}}, {{"op", "status"}}});
    } catch (const TransportError& e) {
      err << "error: " << e.what() << "\n";
      return kExitTransport;
    }
    if (r.value("reply", "") != "status") return render_reply(r, out, err);
    const std::string lock = r["lock"];
    const bool unlocking = lock.find("unlocked") != std::string::npos;
    out << "ack\ncar: " << lock << "\n";
    if (unlocking != (action == "unlock")) err << "warning: that password drives the car the other way\n";
    return kExitOk;
  }
  if (c_reset->parsed()) {
    auto d = device_name();
    if (!d) return bad_device();
    return detail::device_session(addr, std::nullopt,
                                  {{{"op", "reset"}, {"device", *d}, {"code", code}}}, out, err);
  }
  if (c_devices->parsed()) {
    ApiClient api(addr);
    try {
      api.login();
      auto r = api.call({{"op", "devices"}});
      api.logout();
      for (const auto& d : r.at("devices")) {
        out << d["device"].get<std::string>() << " " << d["mac"].get<std::string>() << " \""
            << d["name"].get<std::string>() << "\" bt=" << (d["bt_enabled"].get<bool>() ? "on" : "off")
            << (d["attached"].get<bool>() ? " attached" : "") << "\n";
      }
      return kExitOk;
    } catch (const std::exception& e) {
      api.logout();
      err << "error: " << e.what() << "\n";
      return kExitTransport;
    }
  }
  if (i_ambient->parsed() || i_keypad->parsed()) {
    ApiClient api(addr);
    try {
      api.login();
      json req = i_ambient->parsed() ? json{{"op", "inject"}, {"kind", "ambient"}, {"celsius", celsius}}
                                     : json{{"op", "inject"}, {"kind", "keypad"}, {"keys", keys}};
      auto r = api.call(req);
      api.logout();
      if (r.value("reply", "") == "error") return render_reply(r, out, err);
      if (i_ambient->parsed()) {
        char buf[48];
        std::snprintf(buf, sizeof buf, "ambient set; sensor reads %.4f C", r["temp_c"].get<double>());
        out << buf << "\n";
      } else {
        out << "lcd: " << r["lcd"][0].get<std::string>() << " | " << r["lcd"][1].get<std::string>()
            << "\nbt: " << (r["bt_powered"].get<bool>() ? "on" : "off") << "\n";
        if (r["collapsed"].get<bool>()) {
          out << "COLLAPSED\n";
          return kExitCollapsed;
        }
      }
      return kExitOk;
    } catch (const TransportError& e) {
      api.logout();
      err << "error: " << e.what() << "\n";
      return kExitTransport;
    }
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace homelink::cli
