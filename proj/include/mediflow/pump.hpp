#pragma once

#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "mediflow/api.hpp"
#include "mediflow/kinematics.hpp"
#include "mediflow/time.hpp"
#include "mediflow/transport.hpp"

namespace mediflow {

// ---------------------------------------------------------------- phases

enum class Phase { Idle, Authenticating, AcquiringIndex, Infusing, Completed, Fault };

constexpr std::string_view to_string(Phase p) noexcept {
  switch (p) {
    case Phase::Idle: return "Idle";
    case Phase::Authenticating: return "Authenticating";
    case Phase::AcquiringIndex: return "AcquiringIndex";
    case Phase::Infusing: return "Infusing";
    case Phase::Completed: return "Completed";
    case Phase::Fault: return "Fault";
  }
  return "Fault";
}

inline constexpr std::array kAllPhases = {Phase::Idle,     Phase::Authenticating,
                                          Phase::AcquiringIndex, Phase::Infusing,
                                          Phase::Completed, Phase::Fault};

/// Firmware transition graph. Completed and Fault are terminal.
constexpr bool is_legal_transition(Phase from, Phase to) noexcept {
  switch (from) {
    case Phase::Idle: return to == Phase::Authenticating;
    case Phase::Authenticating: return to == Phase::AcquiringIndex || to == Phase::Fault;
    case Phase::AcquiringIndex:
      return to == Phase::Infusing || to == Phase::Authenticating || to == Phase::Fault;
    case Phase::Infusing:
      return to == Phase::Infusing || to == Phase::Completed || to == Phase::Fault ||
             to == Phase::Authenticating;
    case Phase::Completed:
    case Phase::Fault: return false;
  }
  return false;
}

// ------------------------------------------------------------- planning

struct StepSchedule {
  std::int64_t steps_total = 0;
  double step_interval_s = 0;

  double ideal_duration_s() const { return double(steps_total) * step_interval_s; }
};

inline StepSchedule plan_schedule(double volume_ml, double rate_ml_h, const SyringeKinematics& k) {
  return {volume_to_steps(volume_ml, k), rate_to_step_interval(rate_ml_h, k)};
}

inline StepSchedule plan_schedule(const InfusionIndex& index, const SyringeKinematics& k) {
  return plan_schedule(index.volume_ml, index.rate_ml_h, k);
}

// ---------------------------------------------------------------- noise

struct NoiseParams {
  double efficiency_sigma = 0.015;
  /// Upper bound of the uniform dead-volume draw; negative means one drop quantum.
  double dead_volume_max_ul = -1;
  std::uint64_t seed = 0;

  static NoiseParams none() { return {0.0, 0.0, 0}; }
};

/// Per-run mechanical error: a multiplicative step efficiency and a volume
/// held up in the line that never reaches the scale.
struct NoiseModel {
  double step_efficiency = 1.0;
  double dead_volume_ul = 0.0;

  static NoiseModel draw(const NoiseParams& params, double drop_quantum_ul) {
    std::mt19937_64 rng(params.seed);
    NoiseModel m;
    if (params.efficiency_sigma > 0) {
      std::normal_distribution<double> efficiency(1.0, params.efficiency_sigma);
      m.step_efficiency = std::clamp(efficiency(rng), 0.9, 1.1);
    }
    const double dead_max =
        params.dead_volume_max_ul < 0 ? drop_quantum_ul : params.dead_volume_max_ul;
    if (dead_max > 0) m.dead_volume_ul = std::uniform_real_distribution<double>(0, dead_max)(rng);
    return m;
  }
};

// ---------------------------------------------------------------- trace

struct DropEvent {
  double t_s = 0;
  double drop_volume_ul = 0;
  double cumulative_ml = 0;
  double cumulative_mass_g = 0;

  friend bool operator==(const DropEvent&, const DropEvent&) = default;
};

struct InfusionTrace {
  std::vector<DropEvent> drops;
  double delivered_volume_ml = 0;
  double mean_rate_ml_h = 0;
  double duration_s = 0;

  friend bool operator==(const InfusionTrace&, const InfusionTrace&) = default;
};

inline std::string trace_csv(const InfusionTrace& trace) {
  std::string out = "t_s,drop_volume_ul,cumulative_ml\n";
  for (const auto& d : trace.drops)
    out += fmt::format("{:.4f},{:.4f},{:.6f}\n", d.t_s, d.drop_volume_ul, d.cumulative_ml);
  return out;
}

inline void write_trace_csv(const InfusionTrace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  out << trace_csv(trace);
  if (!out) throw std::runtime_error("cannot write " + path);
}

// ---------------------------------------------------------- step engine

/// Converts executed steps into drops. Fluid pushed by the plunger collects
/// in an accumulator; each time it holds a full drop quantum a drop falls.
/// Totals are recomputed from the step count rather than summed, so long
/// runs do not drift.
class StepEngine {
 public:
  StepEngine(const SyringeKinematics& k, double drop_quantum_ul, NoiseModel noise)
      : volume_per_step_ul_(k.volume_per_step_ul_wide()),
        density_(k.fluid_density_g_ml),
        quantum_ul_(drop_quantum_ul),
        noise_(noise) {
    if (!(drop_quantum_ul > 0)) throw std::domain_error("drop quantum must be positive");
  }

  void start(double t_s) { t_start_ = t_s; }

  void step(double t_s) {
    ++steps_;
    const wide_t pushed = wide_t(steps_) * volume_per_step_ul_ * wide_t(noise_.step_efficiency);
    while (pushed - wide_t(drops_full_) * quantum_ul_ >= wide_t(quantum_ul_)) {
      ++drops_full_;
      emit(t_s, quantum_ul_, 0);
    }
  }

  /// Releases what is left in the line minus the dead volume, once.
  void flush(double t_s) {
    if (flushed_) return;
    flushed_ = true;
    const wide_t pushed = wide_t(steps_) * volume_per_step_ul_ * wide_t(noise_.step_efficiency);
    const wide_t rest = pushed - wide_t(drops_full_) * quantum_ul_ - wide_t(noise_.dead_volume_ul);
    if (rest > 0) emit(t_s, static_cast<double>(rest), static_cast<double>(rest));
    trace_.duration_s = t_s - t_start_;
    trace_.delivered_volume_ml = cumulative_ul_ / 1000;
    trace_.mean_rate_ml_h =
        trace_.duration_s > 0 ? trace_.delivered_volume_ml * 3600 / trace_.duration_s : 0;
  }

  std::int64_t steps() const noexcept { return steps_; }
  double delivered_ml() const noexcept { return cumulative_ul_ / 1000; }
  const InfusionTrace& trace() const noexcept { return trace_; }
  const NoiseModel& noise() const noexcept { return noise_; }
  double drop_quantum_ul() const noexcept { return quantum_ul_; }

 private:
  void emit(double t_s, double volume_ul, double partial_ul) {
    cumulative_ul_ = double(drops_full_) * quantum_ul_ + partial_ul;
    const double cumulative_ml = cumulative_ul_ / 1000;
    trace_.drops.push_back({t_s, volume_ul, cumulative_ml, cumulative_ml * density_});
  }

  wide_t volume_per_step_ul_;
  double density_;
  double quantum_ul_;
  NoiseModel noise_;
  std::int64_t steps_ = 0;
  std::int64_t drops_full_ = 0;
  double cumulative_ul_ = 0;
  double t_start_ = 0;
  bool flushed_ = false;
  InfusionTrace trace_;
};

// ---------------------------------------------------------------- clocks

/// Device time in seconds since the session began.
class DeviceClock {
 public:
  virtual ~DeviceClock() = default;
  virtual double now_s() const = 0;
  /// Moves time forward to `t_s` (no-op if already there).
  virtual void advance_to(double t_s) = 0;
  virtual Timestamp wall(double t_s) const = 0;
};

/// Discrete-event time: advancing is instant. When given the server's
/// ManualClock it drags server time along, so token expiry happens in
/// simulated seconds.
class SimulatedDeviceClock final : public DeviceClock {
 public:
  explicit SimulatedDeviceClock(Timestamp epoch = from_epoch_ms(1'700'000'000'000),
                                ManualClock* server_clock = nullptr)
      : epoch_(epoch), server_clock_(server_clock) {
    if (server_clock_) server_clock_->set(epoch_);
  }

  double now_s() const override { return now_; }
  void advance_to(double t_s) override {
    if (t_s <= now_) return;
    now_ = t_s;
    if (server_clock_) server_clock_->set(wall(t_s));
  }
  Timestamp wall(double t_s) const override {
    return epoch_ + Millis{static_cast<std::int64_t>(std::floor(t_s * 1000))};
  }

 private:
  Timestamp epoch_;
  ManualClock* server_clock_;
  double now_ = 0;
};

class RealtimeDeviceClock final : public DeviceClock {
 public:
  RealtimeDeviceClock()
      : start_(std::chrono::steady_clock::now()), epoch_(SystemClock{}.now()) {}

  double now_s() const override {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }
  void advance_to(double t_s) override {
    std::this_thread::sleep_until(start_ + std::chrono::duration_cast<std::chrono::nanoseconds>(
                                               std::chrono::duration<double>(t_s)));
  }
  Timestamp wall(double t_s) const override {
    return epoch_ + Millis{static_cast<std::int64_t>(std::floor(t_s * 1000))};
  }

 private:
  std::chrono::steady_clock::time_point start_;
  Timestamp epoch_;
};

// ---------------------------------------------------------------- device

struct DeviceConfig {
  std::string username;
  std::string password;
  std::string mac;
  std::string patient_id;
  SyringeKinematics kinematics;
  double poll_interval_s = 60;
  double drop_quantum_ul = 50;
  NoiseParams noise;
  int auth_retry_budget = 3;
  int transport_retry_budget = 3;
  bool report_progress = true;
};

struct Transition {
  Phase from;
  Phase to;
  double t_s;
  std::string reason;
};

struct ActiveInfusion {
  InfusionIndex index;
  std::int64_t steps_total = 0;
  std::int64_t steps_done = 0;
  double step_interval_s = 0;
  double next_poll_at = 0;
};

struct DeviceState {
  Phase phase = Phase::Idle;
  std::optional<std::string> token;
  std::string patient_id;
  std::optional<ActiveInfusion> active;
};

/// Simulated pump firmware: login, fetch the infusion index, drive the
/// motor on a step schedule, poll for changes and adapt, post the record.
///
/// Time only moves through the injected DeviceClock, so a run is a pure
/// function of (config, seed, server responses).
class Device {
 public:
  Device(DeviceConfig config, DeviceTransport& transport, DeviceClock& clock)
      : config_(std::move(config)),
        transport_(transport),
        clock_(clock),
        engine_(config_.kinematics, config_.drop_quantum_ul,
                NoiseModel::draw(config_.noise, config_.drop_quantum_ul)) {
    config_.kinematics.check();
    if (!(config_.poll_interval_s > 0)) throw std::domain_error("poll interval must be positive");
  }

  std::function<void(const Transition&)> on_transition;

  /// Idle -> ... -> Infusing, or Fault.
  void start() {
    if (phase_ != Phase::Idle) return;
    transition(Phase::Authenticating, "session start");
    auto index = acquire();
    if (!index) return;
    begin_infusion(*index);
  }

  /// Processes every event scheduled at or before `t_s`.
  void advance_until(double t_s) {
    if (phase_ == Phase::Idle) start();
    while (phase_ == Phase::Infusing) {
      if (steps_done() >= steps_total_) {
        finish(last_step_t_, InfusionOutcome::completed);
        break;
      }
      const double t_step = next_step_time();
      const double t_poll = next_poll_at_;
      const double t = std::min(t_step, t_poll);
      if (t > t_s) break;
      clock_.advance_to(t);
      if (t_step <= t_poll) {
        engine_.step(t_step);
        last_step_t_ = t_step;
      } else {
        poll(t_poll);
      }
    }
  }

  void run() { advance_until(std::numeric_limits<double>::infinity()); }

  Phase phase() const noexcept { return phase_; }
  const std::vector<Transition>& transitions() const noexcept { return transitions_; }
  const InfusionTrace& trace() const noexcept { return engine_.trace(); }
  const StepEngine& engine() const noexcept { return engine_; }
  const std::string& fault_reason() const noexcept { return fault_reason_; }
  std::optional<InfusionOutcome> outcome() const noexcept { return outcome_; }
  bool record_posted() const noexcept { return record_posted_; }
  int logins() const noexcept { return logins_; }
  int polls_ok() const noexcept { return polls_ok_; }
  int polls_failed() const noexcept { return polls_failed_; }
  /// Every token this device received, in order.
  const std::vector<std::string>& tokens_received() const noexcept { return tokens_received_; }
  /// Every token it presented, in order.
  const std::vector<std::string>& tokens_presented() const noexcept { return tokens_presented_; }
  /// (t_s, volume_ml) of each prescription the device has acted on.
  const std::vector<std::pair<double, InfusionIndex>>& schedule_changes() const noexcept {
    return schedule_changes_;
  }

  DeviceState state() const {
    DeviceState s{phase_, token_, config_.patient_id, std::nullopt};
    if (active_)
      s.active = ActiveInfusion{*active_, steps_total_, steps_done(), step_interval_s_,
                                next_poll_at_};
    return s;
  }

  /// Volume the controller has commanded so far, from nominal kinematics.
  double commanded_ml() const { return steps_to_volume_ml(steps_done(), config_.kinematics); }

 private:
  std::int64_t steps_done() const noexcept { return engine_.steps(); }

  double next_step_time() const {
    return segment_t0_ + double(steps_done() - segment_steps0_ + 1) * step_interval_s_;
  }

  void transition(Phase to, std::string reason) {
    if (!is_legal_transition(phase_, to))
      throw std::logic_error(fmt::format("illegal transition {} -> {}", to_string(phase_),
                                         to_string(to)));
    Transition tr{phase_, to, clock_.now_s(), std::move(reason)};
    phase_ = to;
    transitions_.push_back(tr);
    if (on_transition) on_transition(transitions_.back());
  }

  void fault(std::string reason) {
    fault_reason_ = reason;
    if (active_ && !outcome_) {
      engine_.flush(std::max(last_step_t_, infusion_t0_));
      outcome_ = InfusionOutcome::fault;
    }
    transition(Phase::Fault, std::move(reason));
  }

  void take_token(std::string token) {
    tokens_received_.push_back(token);
    token_ = std::move(token);
  }

  /// The token stays held until the server answers: after a transport
  /// failure the same token is presented again, and if the lost request did
  /// consume it the server says token_reused and the device logs in again.
  std::string present_token() {
    std::string t = token_.value_or("");
    tokens_presented_.push_back(t);
    return t;
  }

  template <typename T>
  void settle_token(const Result<T>& r) {
    if (!r && r.code() != Errc::transport) token_.reset();
  }

  /// Login then index, from phase Authenticating. Leaves the device in
  /// AcquiringIndex on success, Fault on failure.
  std::optional<InfusionIndex> acquire() {
    int auth_failures = 0;
    for (;;) {
      auto login = with_transport_retries(
          [&] { return transport_.login({config_.username, config_.password, config_.mac}); });
      if (!login) {
        fault(std::string(to_string(login.code())));
        return std::nullopt;
      }
      ++logins_;
      take_token(login->token);
      transition(Phase::AcquiringIndex, "login ok");

      auto index = with_transport_retries(
          [&] { return transport_.index(present_token(), index_request()); });
      settle_token(index);
      if (index) {
        take_token(index->token);
        return index->infusion_index;
      }
      if (!is_auth_failure(index.code())) {
        fault(index.code() == Errc::not_found ? "no_active_prescription"
                                              : std::string(to_string(index.code())));
        return std::nullopt;
      }
      if (++auth_failures > config_.auth_retry_budget) {
        fault("auth_retry_budget_exhausted");
        return std::nullopt;
      }
      transition(Phase::Authenticating, std::string(to_string(index.code())));
    }
  }

  template <typename Fn>
  std::invoke_result_t<Fn&> with_transport_retries(Fn&& fn) {
    auto r = fn();
    for (int i = 0; i < config_.transport_retry_budget && !r && r.code() == Errc::transport; ++i)
      r = fn();
    return r;
  }

  IndexRequest index_request() const {
    IndexRequest req{config_.patient_id, std::nullopt};
    if (config_.report_progress && active_)
      req.progress = DeliveryProgress{active_->version, engine_.delivered_ml(),
                                      clock_.now_s() - infusion_t0_};
    return req;
  }

  void begin_infusion(const InfusionIndex& index) {
    const double t = clock_.now_s();
    infusion_t0_ = t;
    last_step_t_ = t;
    engine_.start(t);
    active_ = index;
    const auto plan = plan_schedule(index, config_.kinematics);
    steps_total_ = plan.steps_total;
    step_interval_s_ = plan.step_interval_s;
    segment_t0_ = t;
    segment_steps0_ = 0;
    next_poll_at_ = t + config_.poll_interval_s;
    schedule_changes_.emplace_back(t, index);
    transition(Phase::Infusing, fmt::format("version {}", index.version));
  }

  /// Applies a fetched index. Newer versions re-plan from what has been
  /// commanded so far; an order already satisfied stops the motor.
  void adapt(const InfusionIndex& index, double t) {
    if (index.version <= active_->version) return;
    const double remaining_ml = index.volume_ml - commanded_ml();
    active_ = index;
    schedule_changes_.emplace_back(t, index);
    if (remaining_ml <= 0) {
      transition(Phase::Infusing, fmt::format("version {}: volume already met", index.version));
      finish(t, InfusionOutcome::superseded_mid_infusion);
      return;
    }
    steps_total_ = steps_done() + volume_to_steps(remaining_ml, config_.kinematics);
    step_interval_s_ = rate_to_step_interval(index.rate_ml_h, config_.kinematics);
    segment_t0_ = t;
    segment_steps0_ = steps_done();
    transition(Phase::Infusing, fmt::format("adapted to version {}", index.version));
  }

  void poll(double t) {
    next_poll_at_ = t + config_.poll_interval_s;
    if (!token_) {
      relogin(t, "no token");
      return;
    }
    auto r = transport_.index(present_token(), index_request());
    settle_token(r);
    if (r) {
      take_token(r->token);
      adapt(r->infusion_index, t);
    } else if (is_auth_failure(r.code())) {
      relogin(t, std::string(to_string(r.code())));
    }
    // Transport loss and other server errors: keep the current schedule and
    // try again at the next poll.
    ++(r ? polls_ok_ : polls_failed_);
  }

  /// Mid-infusion re-login. The motor timeline is untouched.
  void relogin(double t, std::string reason) {
    transition(Phase::Authenticating, std::move(reason));
    auto index = acquire();
    if (!index) return;
    transition(Phase::Infusing, "re-login ok");
    adapt(*index, t);
  }

  void finish(double t, InfusionOutcome outcome) {
    engine_.flush(t);
    outcome_ = outcome;
    post_record(t);
    if (phase_ == Phase::Infusing) transition(Phase::Completed, std::string(to_string(outcome)));
  }

  void post_record(double t) {
    InfusionRecord rec;
    rec.patient_id = config_.patient_id;
    rec.prescription_id = active_->prescription_id;
    rec.version = active_->version;
    rec.started_at = clock_.wall(infusion_t0_);
    rec.finished_at = clock_.wall(t);
    rec.delivered_volume_ml = engine_.trace().delivered_volume_ml;
    rec.mean_rate_ml_h = engine_.trace().mean_rate_ml_h;
    rec.outcome = *outcome_;
    for (int attempt = 0; attempt <= config_.auth_retry_budget; ++attempt) {
      if (!token_) {
        transition(Phase::Authenticating, "need token to post record");
        if (!acquire()) return;
        transition(Phase::Infusing, "re-login ok");
      }
      auto r = with_transport_retries([&] { return transport_.record(present_token(), rec); });
      settle_token(r);
      if (r) {
        take_token(*r);
        record_posted_ = true;
        return;
      }
      if (!is_auth_failure(r.code()) && r.code() != Errc::transport) return;
    }
  }

  DeviceConfig config_;
  DeviceTransport& transport_;
  DeviceClock& clock_;
  StepEngine engine_;

  Phase phase_ = Phase::Idle;
  std::optional<std::string> token_;
  std::optional<InfusionIndex> active_;
  std::int64_t steps_total_ = 0;
  double step_interval_s_ = 0;
  double segment_t0_ = 0;
  std::int64_t segment_steps0_ = 0;
  double next_poll_at_ = 0;
  double infusion_t0_ = 0;
  double last_step_t_ = 0;

  std::vector<Transition> transitions_;
  std::vector<std::string> tokens_received_;
  std::vector<std::string> tokens_presented_;
  std::vector<std::pair<double, InfusionIndex>> schedule_changes_;
  std::optional<InfusionOutcome> outcome_;
  std::string fault_reason_;
  bool record_posted_ = false;
  int logins_ = 0;
  int polls_ok_ = 0;
  int polls_failed_ = 0;
};

}  // namespace mediflow
