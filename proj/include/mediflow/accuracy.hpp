#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "mediflow/pump.hpp"
#include "mediflow/seed.hpp"
#include "mediflow/service.hpp"
#include "mediflow/transport.hpp"

namespace mediflow {

/// Half away from zero, to two decimals.
inline double round2(double x) { return std::round(x * 100) / 100; }

/// |measured - prescribed| / prescribed * 100, to two decimals.
inline double percent_error(double measured, double prescribed) {
  if (!(prescribed > 0)) throw std::domain_error("prescribed value must be positive");
  return round2(std::fabs(measured - prescribed) / prescribed * 100);
}

struct AccuracySetting {
  double volume_ml = 0;
  double rate_ml_h = 0;
};

/// One experiment. Measured values are rounded to two decimals as a scale
/// and stopwatch would report them, and the errors are computed from those
/// rounded figures; the raw simulator values are kept alongside.
struct AccuracyRow {
  int experiment = 0;
  std::uint64_t seed = 0;
  double delivered_volume_ml = 0;
  double pct_error_volume = 0;
  double avg_rate_ml_h = 0;
  double pct_error_rate = 0;
  double raw_delivered_volume_ml = 0;
  double raw_avg_rate_ml_h = 0;
};

inline AccuracyRow make_accuracy_row(int experiment, const AccuracySetting& setting,
                                     double delivered_ml, double rate_ml_h,
                                     std::uint64_t seed = 0) {
  AccuracyRow row;
  row.experiment = experiment;
  row.seed = seed;
  row.raw_delivered_volume_ml = delivered_ml;
  row.raw_avg_rate_ml_h = rate_ml_h;
  row.delivered_volume_ml = round2(delivered_ml);
  row.avg_rate_ml_h = round2(rate_ml_h);
  row.pct_error_volume = percent_error(row.delivered_volume_ml, setting.volume_ml);
  row.pct_error_rate = percent_error(row.avg_rate_ml_h, setting.rate_ml_h);
  return row;
}

struct AccuracyReport {
  AccuracySetting setting;
  std::vector<AccuracyRow> rows;
  double avg_pct_error_volume = 0;
  double avg_pct_error_rate = 0;
  std::vector<InfusionTrace> traces;  // one per row when kept
};

inline void finalize_averages(AccuracyReport& report) {
  if (report.rows.empty()) return;
  double v = 0, r = 0;
  for (const auto& row : report.rows) {
    v += row.pct_error_volume;
    r += row.pct_error_rate;
  }
  const auto n = double(report.rows.size());
  report.avg_pct_error_volume = round2(v / n);
  report.avg_pct_error_rate = round2(r / n);
}

struct AccuracyOptions {
  SyringeKinematics kinematics;
  double efficiency_sigma = 0.015;
  double dead_volume_max_ul = -1;
  double drop_quantum_ul = 50;
  double poll_interval_s = 60;
  Millis token_ttl = kDefaultTokenTtl;
  bool keep_traces = false;
};

/// Result of one end-to-end simulated infusion against an in-process server.
struct SimulatedRun {
  InfusionTrace trace;
  Phase phase = Phase::Idle;
  std::string fault_reason;
  bool record_posted = false;
};

inline SimulatedRun simulate_infusion(const AccuracySetting& setting, std::uint64_t seed,
                                      const AccuracyOptions& options) {
  auto server_clock = std::make_shared<ManualClock>();
  ServiceConfig config;
  config.token_ttl = options.token_ttl;
  config.pbkdf2_iterations = 1000;
  Service service(config, server_clock);
  DemoSeed demo;
  demo.max_volume_ml = std::max(demo.max_volume_ml, setting.volume_ml);
  demo.max_rate_ml_h = std::max(demo.max_rate_ml_h, setting.rate_ml_h);
  demo.volume_ml = setting.volume_ml;
  demo.rate_ml_h = setting.rate_ml_h;
  if (auto s = seed_demo(service, demo); !s)
    throw std::runtime_error("seeding failed: " + s.error().detail);

  InProcessTransport transport(service);
  SimulatedDeviceClock clock(server_clock->now(), server_clock.get());
  DeviceConfig dc;
  dc.username = demo.device_username;
  dc.password = demo.device_password;
  dc.mac = demo.mac;
  dc.patient_id = demo.patient_id;
  dc.kinematics = options.kinematics;
  dc.poll_interval_s = options.poll_interval_s;
  dc.drop_quantum_ul = options.drop_quantum_ul;
  dc.noise = {options.efficiency_sigma, options.dead_volume_max_ul, seed};
  Device device(dc, transport, clock);
  device.run();
  return {device.trace(), device.phase(), device.fault_reason(), device.record_posted()};
}

/// Repeats the infusion once per seed and tabulates the errors.
inline AccuracyReport run_accuracy(const AccuracySetting& setting,
                                   const std::vector<std::uint64_t>& seeds,
                                   const AccuracyOptions& options = {}) {
  AccuracyReport report;
  report.setting = setting;
  int experiment = 0;
  for (auto seed : seeds) {
    auto run = simulate_infusion(setting, seed, options);
    if (run.phase != Phase::Completed)
      throw std::runtime_error("simulated infusion ended in " + std::string(to_string(run.phase)) +
                               ": " + run.fault_reason);
    report.rows.push_back(make_accuracy_row(++experiment, setting, run.trace.delivered_volume_ml,
                                            run.trace.mean_rate_ml_h, seed));
    if (options.keep_traces) report.traces.push_back(std::move(run.trace));
  }
  finalize_averages(report);
  return report;
}

/// Seeds 1..runs.
inline std::vector<std::uint64_t> default_seeds(int runs) {
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(std::max(runs, 0)));
  std::iota(seeds.begin(), seeds.end(), std::uint64_t{1});
  return seeds;
}

}  // namespace mediflow
