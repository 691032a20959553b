/*
 * generators.hpp
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

// Random value generators shared by the property tests and the acceptance
// suite.

#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "homelink/wireproto.hpp"

namespace homelink::testing {

inline std::string random_secret(std::mt19937_64& rng, std::size_t max_len = wire::kMaxSecret) {
  std::uniform_int_distribution<std::size_t> len(0, max_len);
  std::uniform_int_distribution<int> ch(0x20, 0x7E);
  std::string s(len(rng), ' ');
  for (char& c : s) c = static_cast<char>(ch(rng));
  return s;
}

inline wire::Command random_command(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 8);
  std::uniform_int_distribution<int> byte(0, 255);
  std::bernoulli_distribution coin;
  switch (pick(rng)) {
    case 0: return wire::Auth{random_secret(rng)};
    case 1: return wire::Lock{};
    case 2: return wire::Unlock{};
    case 3: return wire::LightSet{static_cast<std::uint8_t>(byte(rng)), coin(rng)};
    case 4: return wire::FanSet{coin(rng)};
    case 5: return wire::FanStep{static_cast<std::int8_t>(byte(rng) - 128)};
    case 6: return wire::TempQuery{};
    case 7: return wire::StatusQuery{};
    default: return wire::ResetAuth{random_secret(rng)};
  }
}

inline wire::Response random_response(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 4);
  std::uniform_int_distribution<int> reason(1, 7);
  std::uniform_int_distribution<int> raw(-32768, 32767);
  std::uniform_int_distribution<int> byte(0, 255);
  std::uniform_int_distribution<int> lock(0, 4);
  std::bernoulli_distribution coin;
  switch (pick(rng)) {
    case 0: return wire::Ack{};
    case 1: return wire::Nack{static_cast<wire::NackReason>(reason(rng))};
    case 2: return wire::Collapsed{};
    case 3: return wire::TempReport{static_cast<std::int16_t>(raw(rng))};
    default:
      return wire::StatusReport{coin(rng), coin(rng), coin(rng),
                                static_cast<std::uint8_t>(byte(rng)),
                                static_cast<wire::LockState>(lock(rng))};
  }
}

inline wire::DeviceClass random_class(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> c(1, 3);
  return static_cast<wire::DeviceClass>(c(rng));
}

}  // namespace homelink::testing
