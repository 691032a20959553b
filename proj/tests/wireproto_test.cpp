/*
 * wireproto_test.cpp
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

#include <gtest/gtest.h>

#include <optional>
#include <random>

#include "generators.hpp"
#include "homelink/wireproto.hpp"

namespace homelink::wire {
namespace {

using Bytes = std::vector<std::uint8_t>;

std::size_t count_frames(const std::vector<DecodeItem>& items) {
  std::size_t n = 0;
  for (const auto& it : items) n += std::holds_alternative<Frame>(it);
  return n;
}

std::size_t count_errors(const std::vector<DecodeItem>& items) {
  return items.size() - count_frames(items);
}

// Independent oracle: XOR of 01 02 30 00 computed by hand and by a one-line
// script before the build, giving 0x33.
TEST(Checksum, KnownValues) {
  EXPECT_EQ(checksum(Bytes{}), 0x00);
  EXPECT_EQ(checksum(Bytes{0xA5}), 0xA5);
  EXPECT_EQ(checksum(Bytes{0x01, 0x02, 0x30, 0x00}), 0x33);
}

TEST(Encode, TempQueryToAutomation) {
  EXPECT_EQ(encode_frame(TempQuery{}, DeviceClass::kAutomation),
            (Bytes{0x7E, 0x01, 0x02, 0x30, 0x00, 0x33}));
}

TEST(Encode, StuffsSofAndEscInsideBody) {
  auto bytes = encode_frame(Auth{"a~b}"}, DeviceClass::kEntry);
  // 7E | 01 01 10 04 | 61 7D5E 62 7D5D | checksum
  ASSERT_GE(bytes.size(), 10u);
  EXPECT_EQ(bytes[0], 0x7E);
  EXPECT_EQ(bytes[5], 0x61);
  EXPECT_EQ(bytes[6], 0x7D);
  EXPECT_EQ(bytes[7], 0x5E);
  EXPECT_EQ(bytes[8], 0x62);
  EXPECT_EQ(bytes[9], 0x7D);
  EXPECT_EQ(bytes[10], 0x5D);
  for (std::size_t i = 1; i < bytes.size(); ++i) EXPECT_NE(bytes[i], kSof);
}

TEST(Encode, RejectsOversizePayload) {
  EXPECT_THROW(make_frame(DeviceClass::kEntry, op::kAuth, Bytes(65, 0x41)), EncodeError);
  EXPECT_NO_THROW(make_frame(DeviceClass::kEntry, op::kAuth, Bytes(64, 0x41)));
  Frame f;
  f.payload.assign(65, 0);
  EXPECT_THROW(encode(f), EncodeError);
}

TEST(Encode, RejectsLongOrUnprintableSecret) {
  EXPECT_THROW(encode_frame(Auth{std::string(17, 'x')}, DeviceClass::kEntry), EncodeError);
  EXPECT_THROW(encode_frame(ResetAuth{std::string("a\x01", 2)}, DeviceClass::kCar), EncodeError);
  EXPECT_NO_THROW(encode_frame(Auth{std::string(16, 'x')}, DeviceClass::kEntry));
}

TEST(Decode, GarbageThenFrame) {
  Decoder d;
  Bytes stream{0xDE, 0xAD};
  auto frame = encode_frame(TempQuery{}, DeviceClass::kAutomation);
  stream.insert(stream.end(), frame.begin(), frame.end());
  auto out = d.feed(stream);
  ASSERT_EQ(out.size(), 1u);
  const auto& f = std::get<Frame>(out[0]);
  EXPECT_EQ(f.opcode, op::kTempQuery);
  EXPECT_EQ(f.device_class, DeviceClass::kAutomation);
  EXPECT_EQ(f.checksum, 0x33);
}

TEST(Decode, BackToBackFramesInOrder) {
  Decoder d;
  auto a = encode_frame(LightSet{1, true}, DeviceClass::kAutomation);
  auto b = encode_frame(StatusQuery{}, DeviceClass::kAutomation);
  a.insert(a.end(), b.begin(), b.end());
  auto out = d.feed(a);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(parse_command(std::get<Frame>(out[0])), Command(LightSet{1, true}));
  EXPECT_EQ(parse_command(std::get<Frame>(out[1])), Command(StatusQuery{}));
}

TEST(Decode, SplitAcrossFeedsIsIdentical) {
  auto bytes = encode_frame(Auth{"s3cr~t}"}, DeviceClass::kEntry);
  for (std::size_t cut = 0; cut <= bytes.size(); ++cut) {
    Decoder d;
    auto first = d.feed(std::span(bytes).first(cut));
    auto second = d.feed(std::span(bytes).subspan(cut));
    first.insert(first.end(), second.begin(), second.end());
    ASSERT_EQ(first.size(), 1u) << "cut " << cut;
    EXPECT_EQ(parse_command(std::get<Frame>(first[0])), Command(Auth{"s3cr~t}"}));
  }
}

TEST(Decode, FlippedPayloadByteIsChecksumMismatch) {
  auto bytes = encode_frame(LightSet{2, true}, DeviceClass::kAutomation);
  for (std::size_t pos : {5u, 6u}) {
    auto bad = bytes;
    bad[pos] ^= 0x04;
    Decoder d;
    auto out = d.feed(bad);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(std::get<DecodeError>(out[0]), DecodeError::kChecksumMismatch);
  }
}

TEST(Decode, DistinctErrorKinds) {
  {
    Decoder d;
    auto out = d.feed(Bytes{0x7E, 0x01, 0x01, 0x10, 0x7D, 0x11});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(std::get<DecodeError>(out[0]), DecodeError::kBadStuffing);
  }
  {
    Decoder d;
    auto out = d.feed(Bytes{0x7E, 0x01, 0x01, 0x10, 0x41});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(std::get<DecodeError>(out[0]), DecodeError::kOversize);
  }
  {
    Decoder d;
    auto out = d.feed(Bytes{0x7E, 0x02});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(std::get<DecodeError>(out[0]), DecodeError::kBadHeader);
  }
  {
    Decoder d;
    auto out = d.feed(Bytes{0x7E, 0x01, 0x01, 0x10, 0x02, 0x41, 0x7E});
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(std::get<DecodeError>(out[0]), DecodeError::kTruncated);
    EXPECT_EQ(d.phase(), Decoder::Phase::kBody);
    EXPECT_EQ(d.finish().size(), 1u);
  }
}

TEST(Decode, StateAfterErrorEqualsFreshDecoder) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> byte(0, 255);
  for (int trial = 0; trial < 2000; ++trial) {
    Decoder d;
    Bytes junk(1 + trial % 40);
    for (auto& b : junk) b = static_cast<std::uint8_t>(byte(rng));
    auto out = d.feed(junk);
    if (count_errors(out) > 0 && d.phase() == Decoder::Phase::kHunt) {
      EXPECT_EQ(d, Decoder{});
    }
    // After the next SOF both decoders agree.
    Decoder fresh;
    d.feed(Bytes{kSof});
    fresh.feed(Bytes{kSof});
    EXPECT_EQ(d, fresh);
  }
}

TEST(Decode, ResyncAfterArbitraryGarbage) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> byte(0, 255);
  auto good = encode_frame(FanStep{-1}, DeviceClass::kAutomation);
  for (int trial = 0; trial < 2000; ++trial) {
    Bytes stream(trial % 64);
    for (auto& b : stream) b = static_cast<std::uint8_t>(byte(rng));
    stream.insert(stream.end(), good.begin(), good.end());
    Decoder d;
    auto out = d.feed(stream);
    ASSERT_FALSE(out.empty());
    ASSERT_TRUE(std::holds_alternative<Frame>(out.back()));
    EXPECT_EQ(parse_command(std::get<Frame>(out.back())), Command(FanStep{-1}));
  }
}

TEST(RoundTrip, GeneratedCommandsAndResponses) {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 2000; ++i) {
    auto cls = testing::random_class(rng);
    auto cmd = testing::random_command(rng);
    Decoder d;
    auto out = d.feed(encode_frame(cmd, cls));
    ASSERT_EQ(out.size(), 1u);
    const auto& f = std::get<Frame>(out[0]);
    EXPECT_EQ(f.device_class, cls);
    EXPECT_EQ(parse_command(f), cmd);

    auto rsp = testing::random_response(rng);
    out = d.feed(encode_frame(rsp, cls));
    ASSERT_EQ(out.size(), 1u);
    EXPECT_EQ(parse_response(std::get<Frame>(out[0])), rsp);
  }
}

struct MutationOutcome {
  bool rejected = false;
  std::optional<Frame> frame;
};

MutationOutcome feed_mutated(const Bytes& bad) {
  Decoder d;
  auto out = d.feed(bad);
  auto tail = d.finish();
  out.insert(out.end(), tail.begin(), tail.end());
  MutationOutcome r;
  r.rejected = count_frames(out) == 0 && count_errors(out) >= 1;
  for (const auto& it : out) {
    if (std::holds_alternative<Frame>(it)) r.frame = std::get<Frame>(it);
  }
  return r;
}

// A mutation preserves framing when it touches neither the length byte nor a
// stuffing escape and does not introduce SOF or ESC.
bool preserves_framing(const Bytes& frame, std::size_t pos, std::uint8_t v) {
  if (pos == 4 || v == kSof || v == kEsc) return false;
  if (frame[pos] == kEsc) return false;
  if (frame[pos - 1] == kEsc) return false;
  return true;
}

TEST(Tamper, FixedLengthFramesRejectEverySingleByteMutation) {
  std::mt19937_64 rng(3);
  auto trailer = encode_frame(StatusQuery{}, DeviceClass::kCar);
  int sampled = 0;
  while (sampled < 60) {
    auto cls = testing::random_class(rng);
    Bytes frame = sampled % 2 ? encode_frame(testing::random_command(rng), cls)
                              : encode_frame(testing::random_response(rng), cls);
    if (frame[3] == op::kAuth || frame[3] == op::kResetAuth) continue;
    ++sampled;
    for (std::size_t pos = 1; pos < frame.size(); ++pos) {
      for (int v = 0; v < 256; ++v) {
        if (v == frame[pos]) continue;
        Bytes bad = frame;
        bad[pos] = static_cast<std::uint8_t>(v);
        ASSERT_TRUE(feed_mutated(bad).rejected) << hex(bad);
      }
    }
    Decoder d;
    d.feed(frame);
    auto after = d.feed(trailer);
    ASSERT_EQ(after.size(), 1u);
    EXPECT_TRUE(std::holds_alternative<Frame>(after[0]));
  }
}

// Variable-length secret frames: an XOR checksum without an end marker cannot
// catch every mutation that shifts where the checksum is read. Those escapes
// must be confined to framing-shifting mutations and can only ever yield a
// strictly shorter frame.
TEST(Tamper, SecretFramesEscapeOnlyThroughFramingShift) {
  std::mt19937_64 rng(5);
  for (int sample = 0; sample < 200; ++sample) {
    auto cls = testing::random_class(rng);
    Command cmd = sample % 2 ? Command(Auth{testing::random_secret(rng)})
                             : Command(ResetAuth{testing::random_secret(rng)});
    Bytes frame = encode_frame(cmd, cls);
    for (std::size_t pos = 1; pos < frame.size(); ++pos) {
      for (int v = 0; v < 256; ++v) {
        if (v == frame[pos]) continue;
        Bytes bad = frame;
        bad[pos] = static_cast<std::uint8_t>(v);
        auto outcome = feed_mutated(bad);
        if (preserves_framing(frame, pos, static_cast<std::uint8_t>(v))) {
          ASSERT_TRUE(outcome.rejected) << hex(bad);
        } else if (!outcome.rejected) {
          ASSERT_TRUE(outcome.frame.has_value());
          EXPECT_LT(encode(*outcome.frame).size(), frame.size()) << hex(bad);
        }
      }
    }
  }
}

TEST(Parse, RejectsMalformedMessages) {
  EXPECT_THROW(parse_command(make_frame(DeviceClass::kAutomation, op::kFanSet, {2})),
               MessageError);
  EXPECT_THROW(parse_command(make_frame(DeviceClass::kEntry, op::kAuth, {0x01})), MessageError);
  EXPECT_THROW(parse_command(make_frame(DeviceClass::kEntry, op::kAck, {})), MessageError);
  EXPECT_THROW(parse_response(make_frame(DeviceClass::kEntry, op::kNack, {0x09})), MessageError);
  EXPECT_THROW(parse_response(make_frame(DeviceClass::kEntry, op::kLock, {})), MessageError);
}

TEST(Parse, TempReportIsBigEndianSigned) {
  auto f = make_frame(DeviceClass::kAutomation, op::kTempReport, {0xFF, 0xF8});
  EXPECT_EQ(parse_response(f), Response(TempReport{-8}));
  EXPECT_EQ(payload_of(Response(TempReport{400})), (Bytes{0x01, 0x90}));
}

}  // namespace
}  // namespace homelink::wire
