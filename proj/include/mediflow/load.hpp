#pragma once

#include "mediflow/httplib.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "mediflow/seed.hpp"
#include "mediflow/transport.hpp"

namespace mediflow {

struct LoadOptions {
  std::string base_url;
  int users = 1;
  double duration_s = 60;
  double think_time_s = 0;
  /// Post an infusion record after every index poll.
  bool include_records = false;
  std::function<LoadAccount(int)> account = load_account;
  std::time_t timeout_s = 30;
};

struct LoadSecond {
  int second = 0;
  std::int64_t requests = 0;
  double throughput_rps = 0;
  double avg_response_ms = 0;
};

struct LoadReport {
  int user_count = 0;
  double duration_s = 0;
  std::int64_t total_requests = 0;
  std::int64_t errors = 0;
  double avg_response_ms = 0;
  double max_response_ms = 0;
  double min_response_ms = 0;
  double avg_throughput_rps = 0;
  std::vector<std::int64_t> per_user_requests;
  std::vector<LoadSecond> series;
};

namespace load_detail {

struct Sample {
  int second;
  double latency_ms;
};

struct UserTally {
  std::int64_t requests = 0;
  std::int64_t errors = 0;
  std::vector<Sample> samples;
};

/// One closed-loop virtual device: log in once, then poll the index API
/// with the chained token; any 401 sends it back to login.
inline void virtual_user(const LoadOptions& options, int id,
                         std::chrono::steady_clock::time_point start,
                         std::chrono::steady_clock::time_point deadline, UserTally& tally) {
  using clock = std::chrono::steady_clock;
  HttpTransport http(options.base_url, options.timeout_s);
  const auto account = options.account(id);
  std::optional<std::string> token;
  const auto think = std::chrono::duration_cast<clock::duration>(
      std::chrono::duration<double>(options.think_time_s));

  auto timed = [&](auto&& call) {
    const auto t0 = clock::now();
    auto r = call();
    const auto t1 = clock::now();
    ++tally.requests;
    if (!r) ++tally.errors;
    if (r || r.code() != Errc::transport) {
      const int second = int(std::chrono::duration<double>(t1 - start).count());
      tally.samples.push_back(
          {second, std::chrono::duration<double, std::milli>(t1 - t0).count()});
    }
    return r;
  };

  while (clock::now() < deadline) {
    if (!token) {
      auto r = timed([&] {
        return http.login({account.username, account.password, account.mac});
      });
      if (r) token = r->token;
    } else {
      auto r = timed([&] { return http.index(*token, {account.patient_id, std::nullopt}); });
      token.reset();
      if (r) token = r->token;
      if (r && options.include_records && clock::now() < deadline) {
        InfusionRecord rec;
        rec.patient_id = account.patient_id;
        rec.prescription_id = r->infusion_index.prescription_id;
        rec.version = r->infusion_index.version;
        rec.started_at = rec.finished_at = SystemClock{}.now();
        auto posted = timed([&] { return http.record(*token, rec); });
        token.reset();
        if (posted) token = *posted;
      }
    }
    if (think.count() > 0) std::this_thread::sleep_for(think);
  }
}

}  // namespace load_detail

/// Spawns `users` closed-loop virtual devices for `duration_s` wall-clock
/// seconds and aggregates client-side latencies. Per-user tallies are merged
/// after every thread has joined, so the totals are exact.
inline LoadReport run_load(const LoadOptions& options) {
  if (options.users < 1) throw std::invalid_argument("users must be >= 1");
  if (!(options.duration_s > 0)) throw std::invalid_argument("duration must be positive");
  {
    httplib::Client probe(options.base_url);
    probe.set_connection_timeout(5, 0);
    auto res = probe.Get("/api/health");
    if (!res || res->status != 200)
      throw std::runtime_error("server unreachable at " + options.base_url);
  }

  using clock = std::chrono::steady_clock;
  std::vector<load_detail::UserTally> tallies(static_cast<std::size_t>(options.users));
  const auto start = clock::now();
  const auto deadline = start + std::chrono::duration_cast<clock::duration>(
                                    std::chrono::duration<double>(options.duration_s));
  {
    std::vector<std::jthread> threads;
    threads.reserve(tallies.size());
    for (int i = 0; i < options.users; ++i)
      threads.emplace_back([&, i] {
        load_detail::virtual_user(options, i + 1, start, deadline, tallies[std::size_t(i)]);
      });
  }

  LoadReport report;
  report.user_count = options.users;
  report.duration_s = options.duration_s;
  const int seconds = int(std::ceil(options.duration_s));
  std::vector<std::int64_t> bucket_count(std::size_t(seconds), 0);
  std::vector<double> bucket_latency(std::size_t(seconds), 0);
  double latency_sum = 0;
  std::int64_t latency_n = 0;
  report.min_response_ms = std::numeric_limits<double>::infinity();
  for (const auto& t : tallies) {
    report.per_user_requests.push_back(t.requests);
    report.total_requests += t.requests;
    report.errors += t.errors;
    for (const auto& s : t.samples) {
      const auto b = std::size_t(std::clamp(s.second, 0, seconds - 1));
      ++bucket_count[b];
      bucket_latency[b] += s.latency_ms;
      latency_sum += s.latency_ms;
      ++latency_n;
      report.max_response_ms = std::max(report.max_response_ms, s.latency_ms);
      report.min_response_ms = std::min(report.min_response_ms, s.latency_ms);
    }
  }
  if (latency_n == 0) report.min_response_ms = 0;
  report.avg_response_ms = latency_n ? latency_sum / double(latency_n) : 0;
  report.avg_throughput_rps = double(report.total_requests) / options.duration_s;
  for (int s = 0; s < seconds; ++s) {
    const auto n = bucket_count[std::size_t(s)];
    report.series.push_back(
        {s, n, double(n), n ? bucket_latency[std::size_t(s)] / double(n) : 0.0});
  }
  return report;
}

}  // namespace mediflow
