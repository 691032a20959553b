/*
 * devices_test.cpp
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

#include <cmath>
#include <numbers>
#include <random>

#include "generators.hpp"
#include "homelink/devices.hpp"

namespace homelink::dev {
namespace {

using namespace homelink::wire;
constexpr double kPi = std::numbers::pi;

struct Env {
  std::shared_ptr<sec::CredentialStore> store = [] {
    auto s = std::make_shared<sec::CredentialStore>();
    s->set_device_password(sec::Purpose::kDoorBtEnable, "1234");
    s->set_device_password(sec::Purpose::kDoorLock, "2580");
    s->set_device_password(sec::Purpose::kCarLock, "1111");
    s->set_device_password(sec::Purpose::kCarUnlock, "2222");
    s->set_reset_code("999999");
    return s;
  }();
  std::shared_ptr<sec::AlertChannel> alerts = [] {
    auto a = std::make_shared<sec::AlertChannel>();
    a->recipients = {"+10000000001", "+10000000002"};
    return a;
  }();
  SimClock clock;

  EntryController entry() {
    return EntryController(sec::SecurityModel(
        "entry", store, alerts, &clock, {sec::Purpose::kDoorBtEnable, sec::Purpose::kDoorLock}));
  }
  CarController car(SimMillis pulse = 300) {
    return CarController(sec::SecurityModel("car", store, alerts, &clock,
                                            {sec::Purpose::kCarLock, sec::Purpose::kCarUnlock}),
                         pulse);
  }
};

void type(EntryController& e, std::string_view keys) {
  for (char k : keys) e.keypress(k);
}

// Trapezoid rule for the integral of sin^2 over [a, b].
double trapezoid_sin2(double a, double b, int n) {
  const double h = (b - a) / n;
  double sum = 0.5 * (std::pow(std::sin(a), 2) + std::pow(std::sin(b), 2));
  for (int i = 1; i < n; ++i) sum += std::pow(std::sin(a + i * h), 2);
  return sum * h;
}

TEST(Dimmer, ClosedFormMatchesQuadratureAtSixtyFourAngles) {
  const int n = 1'000'000;
  const double full = trapezoid_sin2(0.0, kPi, n);
  for (int i = 0; i < 64; ++i) {
    const double alpha = kPi * i / 63.0;
    const double numeric = trapezoid_sin2(alpha, kPi, n) / full;
    EXPECT_NEAR(dimmer_power_fraction(alpha), numeric, 1e-9) << "alpha " << alpha;
  }
}

TEST(Dimmer, KnownPoints) {
  EXPECT_EQ(dimmer_power_fraction(0.0), 1.0);
  EXPECT_EQ(dimmer_power_fraction(kPi), 0.0);
  EXPECT_NEAR(dimmer_power_fraction(kPi / 2), 0.5, 1e-15);
  EXPECT_NEAR(dimmer_power_fraction(kPi / 4), 0.909155, 1e-6);
  EXPECT_THROW(dimmer_power_fraction(-1e-9), std::out_of_range);
  EXPECT_THROW(dimmer_power_fraction(kPi + 1e-9), std::out_of_range);
  EXPECT_THROW(dimmer_power_fraction(std::nan("")), std::out_of_range);
}

TEST(Dimmer, LevelMappingAndMonotonicPower) {
  EXPECT_EQ(fan_level_to_angle(5), 0.0);
  EXPECT_EQ(fan_level_to_angle(0), kPi);
  EXPECT_NEAR(fan_level_to_angle(3), 2 * kPi / 5, 1e-15);
  EXPECT_THROW(fan_level_to_angle(6), std::out_of_range);
  EXPECT_THROW(fan_level_to_angle(-1), std::out_of_range);
  EXPECT_EQ(dimmer_power_fraction(fan_level_to_angle(0)), 0.0);
  EXPECT_EQ(dimmer_power_fraction(fan_level_to_angle(5)), 1.0);
  for (int l = 1; l <= 5; ++l) {
    EXPECT_GT(dimmer_power_fraction(fan_level_to_angle(l)),
              dimmer_power_fraction(fan_level_to_angle(l - 1)));
  }
}

TEST(Dimmer, ZeroCrossingSchedule) {
  auto full = zero_crossing_schedule(50, 0.0, 3);
  ASSERT_EQ(full.size(), 3u);
  EXPECT_DOUBLE_EQ(full[1], 0.010);
  EXPECT_DOUBLE_EQ(full[2], 0.020);
  auto none = zero_crossing_schedule(50, kPi, 2);
  EXPECT_DOUBLE_EQ(none[0], 0.010);
  auto half = zero_crossing_schedule(50, kPi / 2, 2);
  EXPECT_DOUBLE_EQ(half[0], 0.005);
  EXPECT_DOUBLE_EQ(half[1], 0.015);
  EXPECT_THROW(zero_crossing_schedule(0, 0, 1), std::invalid_argument);
}

TEST(Temp, QuantizationExamples) {
  TempSensor s;
  s.set_ambient(25.03);
  EXPECT_EQ(s.read(), 400);
  s.set_ambient(-0.5);
  EXPECT_EQ(s.read(), -8);
  s.set_ambient(0.0);
  EXPECT_EQ(s.read(), 0);
  s.set_ambient(-0.01);
  EXPECT_EQ(s.read(), -1);
  EXPECT_TRUE(s.set_ambient(130));
  EXPECT_EQ(s.read(), 2000);
  EXPECT_TRUE(s.set_ambient(-80));
  EXPECT_EQ(s.read(), -880);
  EXPECT_FALSE(s.set_ambient(125));
}

TEST(Temp, FloorPropertyOverRandomAmbients) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> d(-55.0, 125.0);
  TempSensor s;
  for (int i = 0; i < 10000; ++i) {
    const double a = d(rng);
    s.set_ambient(a);
    const double err = a - s.read() * 0.0625;
    ASSERT_GE(err, 0.0) << a;
    ASSERT_LT(err, 0.0625) << a;
  }
}

TEST(Lcd, ClipsOutsideGrid) {
  LcdModel lcd;
  lcd.write(0, 10, "ABCDEFGHIJ");
  lcd.write(1, -2, "xyz");
  lcd.write(2, 0, "gone");
  auto rows = lcd.render();
  EXPECT_EQ(rows[0], "          ABCDEF");
  EXPECT_EQ(rows[1], "z               ");
  EXPECT_EQ(rows[0].size(), 16u);
}

TEST(Entry, CorrectKeypadPasswordPowersBluetooth) {
  Env env;
  auto e = env.entry();
  EXPECT_EQ(e.lcd().text()[0], "ENTER PASSWORD");
  type(e, "12");
  EXPECT_EQ(e.lcd().text()[1], "**");
  type(e, "34");
  auto r = e.keypress('#');
  EXPECT_TRUE(r.powered_now);
  EXPECT_TRUE(e.bt_powered());
  EXPECT_EQ(e.lcd().text()[0], "BT READY");
  EXPECT_EQ(e.lcd().text()[1], "");
}

TEST(Entry, StarClearsBuffer) {
  Env env;
  auto e = env.entry();
  type(e, "12*");
  EXPECT_EQ(e.buffered_digits(), 0u);
  EXPECT_EQ(e.lcd().text()[1], "");
  type(e, "1234#");
  EXPECT_TRUE(e.bt_powered());
}

TEST(Entry, OverflowDropsOldestAndLeavesLcd) {
  Env env;
  auto e = env.entry();
  type(e, "9999999999999999");
  auto before = e.lcd().render();
  type(e, "9");
  EXPECT_EQ(e.lcd().render(), before);
  EXPECT_EQ(e.buffered_digits(), 16u);
  // The oldest digits fall off, so the last four typed still unlock.
  type(e, "1234#");
  EXPECT_FALSE(e.bt_powered());  // buffer holds 12 nines + 1234
  type(e, "*1234#");
  EXPECT_TRUE(e.bt_powered());
}

TEST(Entry, ThreeWrongSubmissionsCollapse) {
  Env env;
  auto e = env.entry();
  type(e, "1#");
  type(e, "2#");
  EXPECT_EQ(e.lcd().text()[0], "ACCESS DENIED");
  auto r = e.keypress('#');
  EXPECT_EQ(r.submitted, sec::VerifyOutcome::kCollapsedNow);
  EXPECT_TRUE(e.security().collapsed());
  EXPECT_TRUE(e.security().alarm_active());
  EXPECT_EQ(e.lcd().text()[0], "SYSTEM LOCKED");
  EXPECT_EQ(env.alerts->outbox->size(), 2u);
  type(e, "1234#");
  EXPECT_FALSE(e.bt_powered());
  EXPECT_EQ(e.handle(StatusQuery{}), Response(Collapsed{}));
  EXPECT_EQ(e.authorized_reset("999999"), sec::ResetOutcome::kRearmed);
  EXPECT_EQ(e.lcd().text()[0], "ENTER PASSWORD");
}

TEST(Entry, DoorRequiresAuthorizedSession) {
  Env env;
  auto e = env.entry();
  type(e, "1234#");
  EXPECT_EQ(e.handle(Unlock{}), Response(Nack{NackReason::kUnauthorized}));
  EXPECT_EQ(e.handle(Auth{"2580"}), Response(Ack{}));
  EXPECT_EQ(e.handle(Unlock{}), Response(Ack{}));
  EXPECT_EQ(e.door(), DoorState::kUnlocked);
  EXPECT_EQ(std::get<StatusReport>(e.handle(StatusQuery{})).lock_state, LockState::kUnlocked);
  e.on_link_closed();
  EXPECT_EQ(e.handle(Lock{}), Response(Nack{NackReason::kUnauthorized}));
  EXPECT_EQ(e.handle(FanSet{true}), Response(Nack{NackReason::kUnsupported}));
}

TEST(Entry, KeypadPasswordDoesNotAuthorizeDoor) {
  Env env;
  auto e = env.entry();
  type(e, "1234#");
  EXPECT_EQ(e.handle(Auth{"1234"}), Response(Nack{NackReason::kWrongPassword}));
}

TEST(Entry, WrongAuthThreeTimesOverLinkCollapses) {
  Env env;
  auto e = env.entry();
  type(e, "1234#");
  EXPECT_EQ(e.handle(Auth{"x"}), Response(Nack{NackReason::kWrongPassword}));
  EXPECT_EQ(e.handle(Auth{"y"}), Response(Nack{NackReason::kWrongPassword}));
  EXPECT_EQ(e.handle(Auth{"z"}), Response(Collapsed{}));
  EXPECT_EQ(e.handle(Auth{"2580"}), Response(Collapsed{}));
  EXPECT_EQ(e.handle(ResetAuth{"nope"}), Response(Collapsed{}));
  EXPECT_EQ(e.handle(ResetAuth{"999999"}), Response(Ack{}));
  EXPECT_EQ(e.handle(Auth{"2580"}), Response(Ack{}));
  EXPECT_EQ(env.alerts->outbox->size(), 2u);
}

TEST(Entry, KeypadAndLinkShareOneCounter) {
  Env env;
  auto e = env.entry();
  type(e, "0#");
  type(e, "1234#");  // success resets
  type(e, "0#");
  type(e, "0#");
  EXPECT_EQ(e.handle(Auth{"bad"}), Response(Collapsed{}));
}

TEST(Entry, SnapshotRestoreRoundTrip) {
  Env env;
  auto a = env.entry();
  type(a, "1234#");
  a.handle(Auth{"2580"});
  a.handle(Unlock{});
  auto b = env.entry();
  b.restore(a.snapshot());
  EXPECT_EQ(b.snapshot(), a.snapshot());
}

TEST(Automation, LightsFanAndNacks) {
  AutomationController a;
  EXPECT_EQ(a.handle(LightSet{1, true}), Response(Ack{}));
  EXPECT_TRUE(std::get<StatusReport>(a.handle(StatusQuery{})).light1);
  EXPECT_EQ(a.handle(LightSet{3, true}), Response(Nack{NackReason::kBadArg}));
  EXPECT_EQ(a.handle(FanStep{1}), Response(Nack{NackReason::kFanOff}));
  EXPECT_EQ(a.handle(FanSet{true}), Response(Ack{}));
  EXPECT_EQ(a.handle(FanStep{2}), Response(Nack{NackReason::kBadArg}));
  EXPECT_EQ(a.handle(Auth{"x"}), Response(Nack{NackReason::kUnsupported}));
  EXPECT_EQ(a.fan_level(), 3);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(a.handle(FanStep{1}), Response(Ack{}));
    EXPECT_LE(a.fan_level(), 5);
  }
  EXPECT_EQ(a.fan_level(), 5);
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(a.handle(FanStep{-1}), Response(Ack{}));
    EXPECT_GE(a.fan_level(), 0);
  }
  EXPECT_EQ(a.fan_level(), 0);
}

TEST(Automation, FanOffDeliversNoPowerButKeepsLevel) {
  AutomationController a;
  a.handle(FanSet{true});
  a.handle(FanStep{1});
  EXPECT_GT(a.delivered_power(), 0.0);
  a.handle(FanSet{false});
  EXPECT_EQ(a.delivered_power(), 0.0);
  EXPECT_EQ(a.fan_level(), 4);
}

TEST(Automation, TempQueryReportsRegister) {
  AutomationController a;
  a.sensor().set_ambient(25.03);
  auto r = std::get<TempReport>(a.handle(TempQuery{}));
  EXPECT_EQ(r.raw, 400);
  EXPECT_EQ(r.celsius(), 25.0);
}

// Reference fold: only Acked commands change state.
TEST(Automation, StatusEqualsFoldOfAcceptedCommands) {
  std::mt19937_64 rng(5);
  AutomationController a;
  struct {
    bool l1 = false, l2 = false, fan = false;
    int level = 3;
  } ref;
  for (int i = 0; i < 5000; ++i) {
    Command c;
    switch (rng() % 4) {
      case 0: c = LightSet{static_cast<std::uint8_t>(rng() % 4), (rng() & 1) != 0}; break;
      case 1: c = FanSet{(rng() & 1) != 0}; break;
      case 2: c = FanStep{static_cast<std::int8_t>(static_cast<int>(rng() % 5) - 2)}; break;
      default: c = StatusQuery{}; break;
    }
    const bool ok = std::holds_alternative<Ack>(a.handle(c));
    if (ok) {
      if (auto* l = std::get_if<LightSet>(&c)) (l->light_id == 1 ? ref.l1 : ref.l2) = l->on;
      if (auto* f = std::get_if<FanSet>(&c)) ref.fan = f->on;
      if (auto* s = std::get_if<FanStep>(&c)) ref.level = std::max(0, std::min(5, ref.level + s->delta));
    }
    auto st = std::get<StatusReport>(a.handle(StatusQuery{}));
    ASSERT_EQ(st.light1, ref.l1);
    ASSERT_EQ(st.light2, ref.l2);
    ASSERT_EQ(st.fan_on, ref.fan);
    ASSERT_EQ(st.fan_level, ref.level);
  }
}

TEST(Car, LockAndUnlockPasswordsDriveActuator) {
  Env env;
  auto car = env.car();
  std::vector<RelayEvent> trace;
  car.set_relay_observer([&](const RelayEvent& e) { trace.push_back(e); });
  EXPECT_EQ(car.handle(Auth{"2222"}, 0), Response(Ack{}));
  EXPECT_TRUE(car.rl2());
  EXPECT_FALSE(car.rl1());
  EXPECT_EQ(car.actuator(), Actuator::kMovingToUnlocked);
  EXPECT_EQ(car.handle(Auth{"1111"}, 100), Response(Nack{NackReason::kBusy}));
  EXPECT_EQ(car.security().failures(), 0);
  car.tick(300);
  EXPECT_EQ(car.actuator(), Actuator::kUnlocked);
  EXPECT_FALSE(car.rl2());
  EXPECT_EQ(car.handle(Auth{"1111"}, 400), Response(Ack{}));
  EXPECT_TRUE(car.rl1());
  car.tick(700);
  EXPECT_EQ(car.actuator(), Actuator::kLocked);
  EXPECT_EQ(trace, (std::vector<RelayEvent>{{0, false, true}, {300, false, false},
                                            {400, true, false}, {700, false, false}}));
}

TEST(Car, WrongPasswordsCollapseAndLockOpcodesAreUnsupported) {
  Env env;
  auto car = env.car();
  EXPECT_EQ(car.handle(Lock{}, 0), Response(Nack{NackReason::kUnsupported}));
  EXPECT_EQ(car.handle(Auth{"a"}, 0), Response(Nack{NackReason::kWrongPassword}));
  EXPECT_EQ(car.handle(Auth{"b"}, 0), Response(Nack{NackReason::kWrongPassword}));
  EXPECT_EQ(car.handle(Auth{"c"}, 0), Response(Collapsed{}));
  EXPECT_EQ(car.handle(Auth{"1111"}, 0), Response(Collapsed{}));
  EXPECT_EQ(env.alerts->outbox->size(), 2u);
  EXPECT_EQ(env.alerts->outbox->messages()[0].device, "car");
}

TEST(Car, RelaysNeverBothEnergizedUnderFuzz) {
  Env env;
  auto car = env.car();
  bool overlap = false;
  car.set_relay_observer([&](const RelayEvent& e) { overlap |= e.rl1 && e.rl2; });
  std::mt19937_64 rng(99);
  SimMillis now = 0;
  const std::vector<std::string> pw = {"1111", "2222", "bad"};
  for (int i = 0; i < 10000; ++i) {
    now += static_cast<SimMillis>(rng() % 400);
    Command c;
    switch (rng() % 8) {
      case 0: c = Lock{}; break;
      case 1: c = StatusQuery{}; break;
      case 2: c = ResetAuth{"999999"}; break;
      default: c = Auth{pw[(rng() % 10) < 8 ? rng() % 2 : 2]}; break;
    }
    car.handle(c, now);
    ASSERT_FALSE(car.rl1() && car.rl2());
  }
  EXPECT_FALSE(overlap);
}

}  // namespace
}  // namespace homelink::dev
