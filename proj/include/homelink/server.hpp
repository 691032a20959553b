/*
 * server.hpp
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
 * @file server.hpp
 * @brief Network listeners: raw frame plane (TCP) and JSON plane (HTTP).
 */

#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <list>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>

#include "homelink/gateway.hpp"
#include "homelink/json_api.hpp"

namespace homelink::gw {

/// One TCP client = one session. Each frame's device class picks (and if
/// needed switches) the attached device; the reply is the device's frame.
class RawServer {
 public:
  RawServer(Gateway& gw, const std::string& host, int port) : gw_(gw) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw std::runtime_error("raw plane: socket failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd_);
      throw std::runtime_error("raw plane: bad listen host " + host);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) < 0 || ::listen(fd_, 16) < 0) {
      const std::string err = std::strerror(errno);
      ::close(fd_);
      throw std::runtime_error("raw plane: cannot listen on port " + std::to_string(port) + ": " + err);
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  ~RawServer() { stop(); }

  int port() const { return port_; }

  void stop() {
    if (stopping_.exchange(true)) return;
    ::shutdown(fd_, SHUT_RDWR);
    if (accept_thread_.joinable()) accept_thread_.join();
    ::close(fd_);
    std::list<std::thread> clients;
    {
      std::lock_guard lk(mu_);
      for (int c : client_fds_) ::shutdown(c, SHUT_RDWR);
      clients.swap(clients_);
    }
    for (auto& t : clients) t.join();
  }

 private:
  void accept_loop() {
    while (!stopping_) {
      pollfd p{fd_, POLLIN, 0};
      if (::poll(&p, 1, 100) <= 0) continue;
      int c = ::accept(fd_, nullptr, nullptr);
      if (c < 0) continue;
      int one = 1;
      ::setsockopt(c, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lk(mu_);
      client_fds_.push_back(c);
      clients_.emplace_back([this, c] { serve(c); });
    }
  }

  static bool write_all(int fd, const std::vector<std::uint8_t>& bytes) {
    std::size_t off = 0;
    while (off < bytes.size()) {
      auto n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n <= 0) return false;
      off += static_cast<std::size_t>(n);
    }
    return true;
  }

  void serve(int fd) {
    std::string token;
    try {
      token = gw_.open_session(Transport::kRaw);
    } catch (const GatewayError&) {
      ::close(fd);
      return;
    }
    wire::Decoder decoder;
    std::array<std::uint8_t, 512> buf{};
    bool open = true;
    while (open && !stopping_) {
      pollfd p{fd, POLLIN, 0};
      if (::poll(&p, 1, 100) <= 0) continue;
      auto n = ::recv(fd, buf.data(), buf.size(), 0);
      if (n <= 0) break;
      for (auto& item : decoder.feed(std::span(buf.data(), static_cast<std::size_t>(n)))) {
        if (const auto* err = std::get_if<wire::DecodeError>(&item)) {
          gw_.emit({{"event", "decode_error"},
                    {"session", gw_.session_number(token)},
                    {"error", wire::decode_error_name(*err)}});
          continue;
        }
        if (!reply(fd, token, std::get<wire::Frame>(item))) {
          open = false;
          break;
        }
      }
    }
    gw_.close_session(token);
    std::lock_guard lk(mu_);
    client_fds_.remove(fd);
    ::close(fd);
  }

  // Returns false when the client should be disconnected.
  bool reply(int fd, const std::string& token, const wire::Frame& frame) {
    const auto cls = frame.device_class;
    wire::Command cmd;
    try {
      cmd = wire::parse_command(frame);
    } catch (const wire::MessageError&) {
      return write_all(fd, wire::encode_frame(wire::Nack{wire::NackReason::kMalformed}, cls));
    }
    const auto attach = gw_.attach(token, cls);
    if (attach == AttachResult::kBusy) {
      return write_all(fd, wire::encode_frame(wire::Nack{wire::NackReason::kBusy}, cls));
    }
    // Unreachable or refused: the device is not there to answer at all.
    if (attach != AttachResult::kAttached) return false;
    try {
      return write_all(fd, wire::encode_frame(gw_.dispatch(token, cmd), cls));
    } catch (const GatewayError&) {
      return false;
    }
  }

  Gateway& gw_;
  int fd_ = -1;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::mutex mu_;
  std::list<int> client_fds_;
  std::list<std::thread> clients_;
};

/// JSON plane over HTTP: POST /api with a request object; GET /api/events
/// streams events as server-sent events.
class HttpServer {
 public:
  HttpServer(Gateway& gw, const std::string& host, int port) : gw_(gw), api_(gw) {
    server_.Post("/api", [this](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::parse_error&) {
        res.status = 400;
        res.set_content(error_reply("bad_request", "body is not JSON").dump(), "application/json");
        return;
      }
      res.set_content(api_.handle(body).dump(), "application/json");
    });
    server_.Get("/api/events", [this](const httplib::Request& req, httplib::Response& res) {
      std::uint64_t since = 0;
      if (req.has_param("since")) since = std::stoull(req.get_param_value("since"));
      auto cursor = std::make_shared<std::uint64_t>(since);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "text/event-stream", [this, cursor](std::size_t, httplib::DataSink& sink) {
            if (stopping_) return false;
            for (const auto& e : gw_.log().since(*cursor, std::chrono::milliseconds(500))) {
              *cursor = e["seq"].get<std::uint64_t>();
              const auto line = "id: " + std::to_string(*cursor) + "\ndata: " + e.dump() + "\n\n";
              if (!sink.write(line.data(), line.size())) return false;
            }
            return sink.is_writable();
          });
    });
    server_.Get("/health", [](const httplib::Request&, httplib::Response& res) {
      res.set_content("{\"ok\":true}", "application/json");
    });
    if (port == 0) {
      port_ = server_.bind_to_any_port(host);
    } else if (server_.bind_to_port(host, port)) {
      port_ = port;
    } else {
      port_ = -1;
    }
    if (port_ < 0) throw std::runtime_error("json plane: cannot listen on port " + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~HttpServer() { stop(); }

  int port() const { return port_; }

  void stop() {
    if (stopping_.exchange(true)) return;
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  Gateway& gw_;
  JsonApi api_;
  httplib::Server server_;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread thread_;
};

}  // namespace homelink::gw
