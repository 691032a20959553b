/*
 * scenario.hpp
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
 * @file scenario.hpp
 * @brief Scripted scenarios: JSON-lines steps played against a fresh gateway.
 *
 * One JSON object per line; blank lines and lines starting with '#' are
 * skipped.
 *
 *   {"at":100,"action":"inject","kind":"keypad","keys":"1234#"}
 *   {"at":200,"action":"command","op":"attach","device":"entry"}
 *   {"at":200,"action":"expect","reply":{"reply":"attached"}}
 *   {"at":900,"action":"expect","event":"sms","where":{"recipient":"+880..."},"count":1}
 *
 * Commands run through JsonApi under a named session ("session", default
 * "main"), opened on first use. The report is a deterministic transcript.
 */

#pragma once

#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "homelink/gateway.hpp"
#include "homelink/json_api.hpp"

namespace homelink::scn {

using nlohmann::json;

class ScenarioParseError : public std::runtime_error {
 public:
  ScenarioParseError(int line, const std::string& msg)
      : std::runtime_error("line " + std::to_string(line) + ": " + msg), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct Step {
  int line = 0;
  SimMillis at = 0;
  std::string action;
  json body;  // the whole object
};

inline std::vector<Step> parse(std::istream& in) {
  std::vector<Step> steps;
  std::string text;
  int line = 0;
  SimMillis last_at = 0;
  while (std::getline(in, text)) {
    ++line;
    const auto first = text.find_first_not_of(" \t\r");
    if (first == std::string::npos || text[first] == '#') continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ScenarioParseError(line, std::string("bad JSON: ") + e.what());
    }
    if (!j.is_object()) throw ScenarioParseError(line, "step must be an object");
    if (!j.contains("at") || !j["at"].is_number_integer() || j["at"].get<SimMillis>() < 0) {
      throw ScenarioParseError(line, "\"at\" must be a non-negative integer");
    }
    if (!j.contains("action") || !j["action"].is_string()) {
      throw ScenarioParseError(line, "missing \"action\"");
    }
    Step s{line, j["at"].get<SimMillis>(), j["action"].get<std::string>(), j};
    if (s.at < last_at) throw ScenarioParseError(line, "time goes backwards");
    last_at = s.at;
    if (s.action == "inject") {
      if (!j.contains("kind") || !j["kind"].is_string()) {
        throw ScenarioParseError(line, "inject needs \"kind\"");
      }
    } else if (s.action == "command") {
      if (!j.contains("op") || !j["op"].is_string()) {
        throw ScenarioParseError(line, "command needs \"op\"");
      }
      if (j.contains("session") && !j["session"].is_string()) {
        throw ScenarioParseError(line, "\"session\" must be a name");
      }
    } else if (s.action == "expect") {
      const bool has_reply = j.contains("reply");
      const bool has_event = j.contains("event");
      if (has_reply == has_event) {
        throw ScenarioParseError(line, "expect needs exactly one of \"reply\" or \"event\"");
      }
      if (has_reply && !j["reply"].is_object()) throw ScenarioParseError(line, "\"reply\" must be an object");
      if (has_event && !j["event"].is_string()) throw ScenarioParseError(line, "\"event\" must be a string");
      if (j.contains("where") && !j["where"].is_object()) {
        throw ScenarioParseError(line, "\"where\" must be an object");
      }
      if (j.contains("count") && (!j["count"].is_number_integer() || j["count"].get<int>() < 0)) {
        throw ScenarioParseError(line, "\"count\" must be a non-negative integer");
      }
    } else {
      throw ScenarioParseError(line, "unknown action \"" + s.action + "\"");
    }
    steps.push_back(std::move(s));
  }
  return steps;
}

/// Every key of `want` is present in `have` with an equal value; objects
/// recurse.
inline bool subset_match(const json& want, const json& have) {
  if (!want.is_object()) return want == have;
  if (!have.is_object()) return false;
  for (const auto& [k, v] : want.items()) {
    auto it = have.find(k);
    if (it == have.end() || !subset_match(v, *it)) return false;
  }
  return true;
}

struct Report {
  bool passed = true;
  std::size_t steps_run = 0;
  std::size_t sms_events = 0;
  std::string transcript;
};

namespace detail {

inline json redact(json j) {
  for (const char* k : {"password", "code", "session"}) {
    if (j.contains(k)) j[k] = "***";
  }
  return j;
}

inline json step_args(const json& body) {
  json a = body;
  for (const char* k : {"at", "action", "session"}) a.erase(k);
  return a;
}

inline std::string pad_time(SimMillis t) {
  auto s = std::to_string(t);
  if (s.size() < 7) s.insert(0, 7 - s.size(), '0');
  return s;
}

}  // namespace detail

/// Plays `steps` on a fresh manual-clock gateway whose data lives in a
/// throwaway directory. `base` supplies devices, credentials and recipients.
inline Report play(const std::vector<Step>& steps,
                   gw::GatewayConfig base = gw::GatewayConfig::defaults()) {
  namespace fs = std::filesystem;
  std::random_device rd;
  const auto dir = fs::temp_directory_path() /
                   ("homelink-scenario-" + std::to_string(rd()) + std::to_string(rd()));
  base.data_dir = dir;
  base.clock = gw::ClockMode::kManual;
  base.snapshot_every = 0;

  Report rep;
  std::ostringstream out;
  {
    gw::Gateway gw(base);
    gw::JsonApi api(gw);
    std::map<std::string, std::string> sessions;
    json last_reply;

    auto token_for = [&](const std::string& name) {
      auto it = sessions.find(name);
      if (it != sessions.end()) return it->second;
      auto tok = gw.open_session(gw::Transport::kJson);
      sessions[name] = tok;
      return tok;
    };
    auto fail = [&](const Step& s, const std::string& why) {
      rep.passed = false;
      out << "FAIL line " << s.line << ": " << why << "\n";
      out << "log excerpt:\n";
      auto all = gw::EventLog::read_all(dir);
      const std::size_t from = all.size() > 8 ? all.size() - 8 : 0;
      for (std::size_t i = from; i < all.size(); ++i) out << "  | " << all[i].dump() << "\n";
    };

    for (const auto& s : steps) {
      if (s.at > gw.clock().now()) gw.advance_to(s.at);
      ++rep.steps_run;
      const auto stamp = "[" + detail::pad_time(s.at) + "] ";
      if (s.action == "inject") {
        json req = detail::step_args(s.body);
        req["op"] = "inject";
        req["session"] = token_for("main");
        last_reply = api.handle(req);
        out << stamp << "inject " << detail::redact(detail::step_args(s.body)).dump() << " -> "
            << last_reply.dump() << "\n";
      } else if (s.action == "command") {
        const std::string name = s.body.value("session", "main");
        json req = detail::step_args(s.body);
        const std::string op = req["op"];
        if (op == "login") {
          last_reply = api.handle(req);
          if (last_reply.contains("session")) {
            auto& slot = sessions[name];
            if (!slot.empty()) gw.close_session(slot);
            slot = last_reply["session"].get<std::string>();
          }
        } else {
          req["session"] = token_for(name);
          last_reply = api.handle(req);
          if (op == "logout") sessions.erase(name);
        }
        out << stamp << name << " " << detail::redact(detail::step_args(s.body)).dump() << " -> "
            << detail::redact(last_reply).dump() << "\n";
      } else if (s.body.contains("reply")) {
        const auto& want = s.body["reply"];
        const bool ok = subset_match(want, last_reply);
        out << stamp << "expect reply " << want.dump() << (ok ? " ok" : "") << "\n";
        if (!ok) {
          fail(s, "expected reply " + want.dump() + ", got " + detail::redact(last_reply).dump());
          break;
        }
      } else {
        const std::string ev = s.body["event"];
        const json where = s.body.value("where", json::object());
        std::size_t n = 0;
        for (const auto& e : gw::EventLog::read_all(dir)) {
          if (e.value("event", "") == ev && subset_match(where, e)) ++n;
        }
        const bool exact = s.body.contains("count");
        const auto want = exact ? s.body["count"].get<std::size_t>() : 1;
        const bool ok = exact ? n == want : n >= 1;
        out << stamp << "expect event " << ev << (where.empty() ? "" : " " + where.dump())
            << (exact ? " x" + std::to_string(want) : "") << (ok ? " ok" : "") << "\n";
        if (!ok) {
          fail(s, "expected " + std::string(exact ? "" : "at least ") + std::to_string(want) +
                      " '" + ev + "' event(s) matching " + where.dump() + ", found " +
                      std::to_string(n));
          break;
        }
      }
    }

    if (rep.passed) {
      const auto all = gw::EventLog::read_all(dir);
      out << "log:\n";
      for (const auto& e : all) {
        if (e.value("event", "") == "sms") ++rep.sms_events;
        out << "  | " << e.dump() << "\n";
      }
      out << "events: " << all.size() << " (sms " << rep.sms_events << ")\n";
      out << "PASS (" << rep.steps_run << " steps)\n";
    }
    gw.shutdown();
  }
  std::error_code ec;
  fs::remove_all(dir, ec);
  rep.transcript = out.str();
  return rep;
}

inline Report play_file(const std::filesystem::path& path,
                        gw::GatewayConfig base = gw::GatewayConfig::defaults()) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open scenario " + path.string());
  return play(parse(in), std::move(base));
}

}  // namespace homelink::scn
