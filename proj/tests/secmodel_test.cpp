/*
 * secmodel_test.cpp
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

#include <filesystem>
#include <fstream>
#include <random>

#include "homelink/secmodel.hpp"

namespace homelink::sec {
namespace {

constexpr const char* kGood = "2580";
constexpr const char* kReset = "424242";

std::shared_ptr<CredentialStore> make_store() {
  auto store = std::make_shared<CredentialStore>();
  store->set_app_login("owner", "homelink");
  store->set_device_password(Purpose::kDoorBtEnable, "1234");
  store->set_device_password(Purpose::kDoorLock, kGood);
  store->set_device_password(Purpose::kCarLock, "1111");
  store->set_device_password(Purpose::kCarUnlock, "2222");
  store->set_reset_code(kReset);
  return store;
}

std::shared_ptr<AlertChannel> make_alerts() {
  auto alerts = std::make_shared<AlertChannel>();
  alerts->recipients = {"+8801711000001", "+8801711000999"};
  return alerts;
}

struct Fixture {
  std::shared_ptr<CredentialStore> store = make_store();
  std::shared_ptr<AlertChannel> alerts = make_alerts();
  SimClock clock;
  SecurityModel model{"entry", store, alerts, &clock,
                      {Purpose::kDoorBtEnable, Purpose::kDoorLock}};
};

TEST(Digest, VerifiesAndDiffersPerSalt) {
  auto a = Digest::make("secret");
  auto b = Digest::make("secret");
  EXPECT_TRUE(a.verify("secret"));
  EXPECT_FALSE(a.verify("Secret"));
  EXPECT_NE(a.salt, b.salt);
  EXPECT_NE(a.hash, b.hash);
  auto round = Digest::from_json(a.to_json());
  EXPECT_TRUE(round.verify("secret"));
  EXPECT_THROW(Digest::from_json({{"salt", "zz"}, {"digest", "00"}}), std::invalid_argument);
}

TEST(AppLogin, CorrectWrongAndUnknownUser) {
  auto store = make_store();
  EXPECT_TRUE(store->verify_app_login("owner", "homelink").ok);
  auto wrong = store->verify_app_login("owner", "nope");
  auto unknown = store->verify_app_login("mallory", "homelink");
  EXPECT_FALSE(wrong.ok);
  EXPECT_EQ(wrong.message, "Invalid User Name or Password");
  EXPECT_FALSE(unknown.ok);
  EXPECT_EQ(unknown.message, wrong.message);
}

TEST(AppLogin, FailuresNeverTouchDeviceCounters) {
  Fixture f;
  for (int i = 0; i < 10; ++i) f.store->verify_app_login("owner", "bad");
  EXPECT_EQ(f.model.failures(), 0);
  EXPECT_FALSE(f.model.collapsed());
}

TEST(Verify, TwoFailsThenSuccessResetsCounter) {
  Fixture f;
  EXPECT_EQ(f.model.verify_device_password(Purpose::kDoorLock, "x"), VerifyOutcome::kFail);
  EXPECT_EQ(f.model.verify_device_password(Purpose::kDoorBtEnable, "y"), VerifyOutcome::kFail);
  EXPECT_EQ(f.model.failures(), 2);
  EXPECT_EQ(f.model.verify_device_password(Purpose::kDoorLock, kGood), VerifyOutcome::kOk);
  EXPECT_EQ(f.model.failures(), 0);
  EXPECT_FALSE(f.model.collapsed());
}

TEST(Verify, WrongPasswordAndForeignPurposeAreIndistinguishable) {
  Fixture a;
  Fixture b;
  auto wrong = a.model.verify_device_password(Purpose::kDoorLock, "nope");
  // The entry model does not own car purposes, even with the right password.
  auto foreign = b.model.verify_device_password(Purpose::kCarLock, "1111");
  EXPECT_EQ(wrong, foreign);
  EXPECT_EQ(a.model.state(), b.model.state());
}

TEST(RecordFailure, ThirdConsecutiveFailureCollapses) {
  Fixture f;
  std::vector<SecurityNotice> notices;
  f.model.set_listener([&](const SecurityNotice& n) { notices.push_back(n); });
  f.clock.advance_to(1500);
  EXPECT_EQ(f.model.record_failure(), (std::variant<Armed, CollapseEvent>(Armed{1})));
  EXPECT_EQ(f.model.record_failure(), (std::variant<Armed, CollapseEvent>(Armed{2})));
  auto r = f.model.record_failure();
  ASSERT_TRUE(std::holds_alternative<CollapseEvent>(r));
  EXPECT_EQ(std::get<CollapseEvent>(r).at, 1500);
  EXPECT_TRUE(f.model.collapsed());
  EXPECT_TRUE(f.model.alarm_active());
  EXPECT_THROW(f.model.record_failure(), ProtocolViolation);

  auto sms = f.alerts->outbox->messages();
  ASSERT_EQ(sms.size(), 2u);
  EXPECT_EQ(sms[0].recipient, "+8801711000001");
  EXPECT_EQ(sms[1].recipient, "+8801711000999");
  EXPECT_EQ(sms[0].body,
            "SECURITY ALERT: entry lockdown at 2024-01-01T00:00:01.500Z after 3 failed attempts.");

  std::vector<SecurityNotice::Kind> kinds;
  for (const auto& n : notices) kinds.push_back(n.kind);
  using K = SecurityNotice::Kind;
  EXPECT_EQ(kinds, (std::vector<K>{K::kCollapse, K::kAlarmOn, K::kSms, K::kSms}));
}

TEST(Collapsed, AttemptsAreRejectedAndOutboxUnchanged) {
  Fixture f;
  for (int i = 0; i < 3; ++i) f.model.verify_device_password(Purpose::kDoorLock, "bad");
  ASSERT_TRUE(f.model.collapsed());
  EXPECT_EQ(f.model.verify_device_password(Purpose::kDoorLock, kGood), VerifyOutcome::kCollapsed);
  EXPECT_EQ(f.model.verify_device_password(Purpose::kDoorLock, "bad"), VerifyOutcome::kCollapsed);
  EXPECT_EQ(f.alerts->outbox->size(), 2u);
}

TEST(Reset, WrongCodesNeverRearmOrAlert) {
  Fixture f;
  for (int i = 0; i < 3; ++i) f.model.verify_device_password(Purpose::kDoorLock, "bad");
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(f.model.authorized_reset("000000"), ResetOutcome::kStillCollapsed);
  }
  EXPECT_TRUE(f.model.collapsed());
  EXPECT_EQ(f.alerts->outbox->size(), 2u);
  EXPECT_EQ(f.model.authorized_reset(kReset), ResetOutcome::kRearmed);
  EXPECT_FALSE(f.model.collapsed());
  EXPECT_FALSE(f.model.alarm_active());
  EXPECT_EQ(f.model.failures(), 0);
  EXPECT_EQ(f.model.authorized_reset(kReset), ResetOutcome::kAlreadyArmed);
}

TEST(Alerts, ModemFailureRetriedOnceThenReported) {
  Fixture f;
  std::vector<SecurityNotice::Kind> kinds;
  f.model.set_listener([&](const SecurityNotice& n) { kinds.push_back(n.kind); });
  f.alerts->modem->fail_next_sends(3);  // owner: fail+fail, police: fail+ok
  for (int i = 0; i < 3; ++i) f.model.verify_device_password(Purpose::kDoorLock, "bad");
  using K = SecurityNotice::Kind;
  EXPECT_EQ(kinds, (std::vector<K>{K::kCollapse, K::kAlarmOn, K::kSms, K::kDeliveryFailed,
                                   K::kSms}));
  EXPECT_TRUE(f.model.collapsed());
  EXPECT_EQ(f.alerts->outbox->size(), 2u);
  auto t = f.alerts->modem->transcript();
  EXPECT_EQ(std::count(t.begin(), t.end(), "+CMS ERROR: 38"), 3);
  EXPECT_EQ(std::count(t.begin(), t.end(), "+CMGS: 1"), 1);
}

TEST(Alerts, OutboxAndTranscriptArePersisted) {
  auto dir = std::filesystem::temp_directory_path() / "homelink_secmodel_persist";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  Fixture f;
  f.alerts->outbox = std::make_shared<Outbox>(dir / "sms_outbox.jsonl");
  f.alerts->modem = std::make_shared<GsmModem>(dir / "gsm_transcript.log");
  for (int i = 0; i < 3; ++i) f.model.verify_device_password(Purpose::kDoorLock, "bad");

  std::ifstream in(dir / "sms_outbox.jsonl");
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1]["recipient"], "+8801711000999");
  EXPECT_EQ(rows[0]["device"], "entry");
  EXPECT_TRUE(rows[0].contains("sent_at"));
  EXPECT_TRUE(rows[0].contains("body"));

  std::ifstream tr(dir / "gsm_transcript.log");
  std::string first;
  std::getline(tr, first);
  EXPECT_EQ(first, "AT+CMGF=1");
  std::filesystem::remove_all(dir);
}

// Reference interpreter for the lockout rule, written independently of
// SecurityModel: walk the sequence tracking the current run of failures.
enum class Step { kFail, kSuccess, kResetGood, kResetBad };

struct Reference {
  bool collapsed = false;
  int run = 0;
  int collapses = 0;

  void apply(Step s) {
    if (collapsed) {
      if (s == Step::kResetGood) {
        collapsed = false;
        run = 0;
      }
      return;
    }
    switch (s) {
      case Step::kFail:
        if (++run == 3) {
          collapsed = true;
          ++collapses;
          run = 0;
        }
        break;
      case Step::kSuccess: run = 0; break;
      default: break;
    }
  }
};

void apply(SecurityModel& m, Step s) {
  switch (s) {
    case Step::kFail: m.verify_device_password(Purpose::kDoorLock, "wrong"); break;
    case Step::kSuccess: m.verify_device_password(Purpose::kDoorLock, kGood); break;
    case Step::kResetGood: m.authorized_reset(kReset); break;
    case Step::kResetBad: m.authorized_reset("bad-code"); break;
  }
}

TEST(Lockout, MatchesReferenceForAllSequencesUpToLengthEight) {
  auto store = make_store();
  std::size_t checked = 0;
  for (int len = 0; len <= 8; ++len) {
    const int total = 1 << (2 * len);
    for (int code = 0; code < total; ++code) {
      auto alerts = make_alerts();
      SecurityModel m("entry", store, alerts, nullptr, {Purpose::kDoorLock});
      Reference ref;
      for (int i = 0; i < len; ++i) {
        auto s = static_cast<Step>((code >> (2 * i)) & 3);
        apply(m, s);
        ref.apply(s);
        ASSERT_EQ(m.collapsed(), ref.collapsed) << "len " << len << " code " << code;
        ASSERT_EQ(m.alarm_active(), m.collapsed());
        ASSERT_EQ(alerts->outbox->size(), static_cast<std::size_t>(2 * ref.collapses));
        if (!ref.collapsed) {
          ASSERT_EQ(m.failures(), ref.run);
        }
      }
      ++checked;
    }
  }
  EXPECT_EQ(checked, 87381u);
}

// Closed-form oracle for the fail/success alphabet: collapse iff "FFF" occurs.
TEST(Lockout, FailSuccessSequencesCollapseIffThreeConsecutiveFails) {
  auto store = make_store();
  for (int code = 0; code < 256; ++code) {
    std::string pattern;
    auto alerts = make_alerts();
    SecurityModel m("car", store, alerts, nullptr, {Purpose::kDoorLock});
    for (int i = 0; i < 8; ++i) {
      bool fail = (code >> i) & 1;
      pattern.push_back(fail ? 'F' : 'S');
      apply(m, fail ? Step::kFail : Step::kSuccess);
    }
    const bool expect = pattern.find("FFF") != std::string::npos;
    EXPECT_EQ(m.collapsed(), expect) << pattern;
    EXPECT_EQ(alerts->outbox->size(), expect ? 2u : 0u) << pattern;
  }
}

TEST(Lockout, FailSuccessFailFailStaysArmedAtTwo) {
  Fixture f;
  apply(f.model, Step::kFail);
  apply(f.model, Step::kSuccess);
  apply(f.model, Step::kFail);
  apply(f.model, Step::kFail);
  EXPECT_FALSE(f.model.collapsed());
  EXPECT_EQ(f.model.failures(), 2);
}

TEST(State, RestoreRoundTrip) {
  Fixture f;
  f.clock.advance_to(77);
  for (int i = 0; i < 3; ++i) apply(f.model, Step::kFail);
  auto st = f.model.state();
  EXPECT_EQ(SecurityState::from_json(st.to_json()), st);
  Fixture g;
  g.model.restore(st);
  EXPECT_TRUE(g.model.collapsed());
  EXPECT_EQ(g.model.state(), st);
}

}  // namespace
}  // namespace homelink::sec
