#include <gtest/gtest.h>

#include <atomic>
#include <barrier>
#include <set>
#include <thread>
#include <vector>

#include "mediflow/token_store.hpp"

using namespace mediflow;
using namespace std::chrono_literals;

namespace {
const Timestamp t0 = from_epoch_ms(1'700'000'000'000);
}

TEST(TokenStore, FreshTokenConsumesOnce) {
  TokenStore store;
  auto tok = store.issue("dev1", t0);
  ASSERT_TRUE(tok);
  EXPECT_EQ(tok->value.size(), 64u);
  EXPECT_EQ(tok->value.find_first_not_of("0123456789abcdef"), std::string::npos);
  auto who = store.consume(tok->value, t0 + 1s);
  ASSERT_TRUE(who);
  EXPECT_EQ(*who, "dev1");
}

TEST(TokenStore, IssuedTokensAreDistinct) {
  TokenStore store;
  std::set<std::string> seen;
  for (int i = 0; i < 1000; ++i) seen.insert(store.issue("dev1", t0)->value);
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(TokenStore, ExpiryIsIssuePlusTtl) {
  TokenStore store(300s);
  auto tok = store.issue("dev1", t0);
  EXPECT_EQ(tok->expires_at, t0 + 300s);
  EXPECT_FALSE(tok->consumed);
}

TEST(TokenStore, UnknownPrincipalRejected) {
  TokenStore store(300s, [](std::string_view p) { return p == "dev1"; });
  EXPECT_TRUE(store.issue("dev1", t0));
  auto r = store.issue("mallory", t0);
  ASSERT_FALSE(r);
  EXPECT_EQ(r.code(), Errc::unknown_principal);
}

TEST(TokenStore, ValidityWindowIsHalfOpen) {
  TokenStore store(300s);
  auto a = store.issue("dev1", t0);
  auto b = store.issue("dev1", t0);
  EXPECT_TRUE(store.consume(a->value, t0 + 300s - 1ms));
  auto late = store.consume(b->value, t0 + 300s);
  ASSERT_FALSE(late);
  EXPECT_EQ(late.code(), Errc::token_expired);
}

TEST(TokenStore, ErrorsAreDistinguishable) {
  TokenStore store(300s);
  auto a = store.issue("dev1", t0);
  EXPECT_EQ(store.consume("nope", t0).code(), Errc::token_invalid);
  EXPECT_TRUE(store.consume(a->value, t0));
  EXPECT_EQ(store.consume(a->value, t0 + 1s).code(), Errc::token_reused);
  auto b = store.issue("dev1", t0);
  EXPECT_EQ(store.consume(b->value, t0 + 301s).code(), Errc::token_expired);
}

TEST(TokenStore, PurgeRemovesOnlyExpired) {
  TokenStore store(10s);
  std::vector<std::string> live;
  for (int i = 0; i < 3; ++i) store.issue("old", t0);
  for (int i = 0; i < 2; ++i) live.push_back(store.issue("new", t0 + 20s)->value);
  EXPECT_EQ(store.purge_expired(t0 + 25s), 3u);
  for (const auto& v : live) EXPECT_TRUE(store.consume(v, t0 + 25s));
}

TEST(TokenStore, PurgeOnEmptyStore) {
  TokenStore store;
  EXPECT_EQ(store.purge_expired(t0), 0u);
}

TEST(TokenStore, PurgeRemovesTokenExpiringExactlyNow) {
  TokenStore store(10s);
  store.issue("dev1", t0);
  EXPECT_EQ(store.purge_expired(t0 + 10s), 1u);
  EXPECT_EQ(store.size(), 0u);
}

TEST(TokenStore, ConcurrentConsumeHasSingleWinner) {
  TokenStore store;
  for (int trial = 0; trial < 50; ++trial) {
    const auto tok = store.issue("dev1", t0)->value;
    std::atomic<int> ok{0}, reused{0};
    std::barrier sync(16);
    {
      std::vector<std::jthread> threads;
      for (int i = 0; i < 16; ++i)
        threads.emplace_back([&] {
          sync.arrive_and_wait();
          auto r = store.consume(tok, t0 + 1s);
          if (r) ++ok;
          else if (r.code() == Errc::token_reused) ++reused;
        });
    }
    ASSERT_EQ(ok.load(), 1);
    ASSERT_EQ(reused.load(), 15);
  }
}

TEST(TokenStore, ConsumeNeverSucceedsPastExpiryUnderPurge) {
  TokenStore store(5ms);
  std::vector<std::string> values;
  for (int i = 0; i < 500; ++i) values.push_back(store.issue("dev1", t0)->value);
  std::atomic<int> successes{0};
  {
    std::jthread purger([&] {
      for (int i = 0; i < 200; ++i) store.purge_expired(t0 + std::chrono::milliseconds(i % 10));
    });
    std::jthread consumer([&] {
      for (const auto& v : values)
        if (store.consume(v, t0 + 5ms)) ++successes;
    });
  }
  EXPECT_EQ(successes.load(), 0);
}
