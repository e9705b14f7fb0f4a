#pragma once

// End-to-end scenarios shared by the unit suite and the acceptance binary.

#include <fmt/format.h>

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "mediflow/pump.hpp"
#include "mediflow/transport.hpp"

namespace scenarios {

using namespace mediflow;

/// A demo tenant plus one simulated device wired to it in-process.
struct Rig {
  fixtures::Demo demo;
  std::unique_ptr<DeviceTransport> transport;
  SimulatedDeviceClock clock;
  std::unique_ptr<Device> device;

  explicit Rig(DeviceConfig config = default_device(), ServiceConfig service = fixtures::fast_config())
      : demo(std::move(service)), clock(demo.clock->now(), demo.clock.get()) {
    transport = std::make_unique<InProcessTransport>(*demo.service);
    device = std::make_unique<Device>(std::move(config), *transport, clock);
  }

  static DeviceConfig default_device() {
    DeviceConfig c;
    c.username = "dev1";
    c.password = "pw";
    c.mac = "AA:BB:CC:DD:EE:01";
    c.patient_id = "p-001";
    c.noise = NoiseParams::none();
    return c;
  }

  /// Approves {volume, rate} for p-001 through the proposal workflow.
  Prescription approve(double volume_ml, double rate_ml_h) {
    auto p = demo.service->propose_adjustment("p-001", volume_ml, rate_ml_h).value();
    return *demo.service->decide_adjustment(demo.physician_token(), p.proposal_id, Decision::approve)
                .value()
                .prescription;
  }
};

// ------------------------------------------------------------ adaptation

struct AdaptationResult {
  double end_s = 0;
  double delivered_ml = 0;
  Phase phase = Phase::Idle;
  std::optional<InfusionOutcome> outcome;
  std::vector<std::pair<double, InfusionIndex>> changes;
};

/// 2 mL at 4 mL/h; the physician approves 2 mL at 5 mL/h just before t=900 s.
inline AdaptationResult run_rate_change() {
  Rig rig;
  rig.device->advance_until(899.999);
  rig.approve(2, 5);
  rig.device->run();
  return {rig.device->trace().duration_s, rig.device->trace().delivered_volume_ml,
          rig.device->phase(), rig.device->outcome(), rig.device->schedule_changes()};
}

/// Closed-form two-phase completion time: volume delivered at r1 until t1,
/// the remainder at r2.
inline double two_phase_end_s(double volume_ml, double r1, double t1, double r2) {
  const double done = r1 * t1 / 3600;
  return t1 + (volume_ml - done) / r2 * 3600;
}

// ---------------------------------------------------------- safety fuzz

struct FuzzOutcome {
  bool ok = true;
  std::string failure;
  int approvals = 0;
  int adaptations = 0;  // orders the device adopted after its first
  int drops = 0;
};

/// One randomized run: a device infuses while proposals, decisions and
/// limit edits arrive at random times. Checks, at every drop, that the
/// cumulative volume stays within one drop quantum of the prescription the
/// device was executing, and that every approval respects the limits in
/// force when it was made.
inline FuzzOutcome safety_sequence(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0, 1);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  auto service_config = fixtures::fast_config();
  service_config.pbkdf2_iterations = 1;
  fixtures::Demo demo(service_config);
  auto& svc = *demo.service;
  const double max_v = between(0.2, 1.0), max_r = between(2, 12);
  // The physician logs in for each action; simulated time outlives any one token.
  svc.set_limits(demo.physician_token(), "p-001", max_v, max_r).value();
  auto first = svc.propose_adjustment("p-001", between(0.05, max_v), between(1, max_r)).value();
  svc.decide_adjustment(demo.physician_token(), first.proposal_id, Decision::approve).value();

  auto device_config = Rig::default_device();
  device_config.poll_interval_s = between(5, 60);
  device_config.noise = {0.0, -1, seed};  // dead volume only: efficiency > 1 is real over-delivery
  InProcessTransport transport(svc);
  SimulatedDeviceClock clock(demo.clock->now(), demo.clock.get());
  Device device(device_config, transport, clock);

  FuzzOutcome out;
  auto fail = [&](std::string why) {
    if (out.ok) out.failure = fmt::format("seed {}: {}", seed, why);
    out.ok = false;
  };

  device.start();
  double t = 0;
  const int events = 1 + int(rng() % 16);
  for (int e = 0; e < events && device.phase() == Phase::Infusing; ++e) {
    t += between(1, 90);
    device.advance_until(t);
    const auto action = rng() % 4;
    if (action == 0 || action == 1)
      svc.propose_adjustment("p-001", between(0.02, 1.5 * max_v), between(0.5, 1.5 * max_r));
    switch (action) {
      case 0: break;
      case 1:
      case 2: {
        std::vector<AdjustmentProposal> pending;
        for (auto& p : svc.proposals("p-001"))
          if (p.state == ProposalState::pending) pending.push_back(p);
        if (pending.empty()) break;
        const auto& pick = pending[rng() % pending.size()];
        const auto limits = *svc.profile("p-001");
        auto r = svc.decide_adjustment(demo.physician_token(), pick.proposal_id,
                                       unit(rng) < 0.7 ? Decision::approve : Decision::reject);
        if (!r) {
          fail(fmt::format("decision failed: {}", to_string(r.code())));
          break;
        }
        if (r->prescription) {
          ++out.approvals;
          if (!validate_prescription(*r->prescription, limits))
            fail("approved prescription violates limits in force");
        }
        break;
      }
      default: {
        svc.set_limits(demo.physician_token(), "p-001", between(0.05, max_v), between(0.5, max_r))
            .value();
      }
    }
  }
  device.run();
  if (device.phase() != Phase::Completed)
    fail(fmt::format("device ended in {} ({})", to_string(device.phase()), device.fault_reason()));

  const auto& changes = device.schedule_changes();
  const double quantum_ml = device_config.drop_quantum_ul / 1000;
  for (const auto& drop : device.trace().drops) {
    // Governing order: the last one the device adopted strictly before this drop.
    const InfusionIndex* governing = &changes.front().second;
    for (const auto& [at, index] : changes)
      if (at < drop.t_s) governing = &index;
    if (drop.cumulative_ml > governing->volume_ml + quantum_ml + 1e-12)
      fail(fmt::format("delivered {:.6f} mL at t={:.3f} s under order v{} of {:.6f} mL",
                       drop.cumulative_ml, drop.t_s, governing->version, governing->volume_ml));
  }
  out.drops = int(device.trace().drops.size());
  out.adaptations = int(changes.size()) - 1;
  return out;
}

// ------------------------------------------------------ protocol transcript

struct Exchange {
  double t_s = 0;
  std::string call;  // "login", "index", "record"
  std::string presented;
  std::optional<Errc> error;
  std::string returned;
};

/// Forwards to another transport and writes down every exchange. Between
/// `outage_from` and `outage_to` device seconds index calls fail as if the
/// network were down, without reaching the server.
class RecordingTransport final : public DeviceTransport {
 public:
  RecordingTransport(DeviceTransport& inner, const DeviceClock& clock)
      : inner_(inner), clock_(clock) {}

  double outage_from = -1, outage_to = -1;
  std::vector<Exchange> log;

  Result<LoginResponse> login(const LoginRequest& req) override {
    auto r = inner_.login(req);
    note("login", "", r, r ? r->token : "");
    return r;
  }
  Result<IndexResponse> index(const std::string& token, const IndexRequest& req) override {
    const double t = clock_.now_s();
    Result<IndexResponse> r = (t >= outage_from && t < outage_to)
                                  ? Result<IndexResponse>(Errc::transport, "simulated outage")
                                  : inner_.index(token, req);
    note("index", token, r, r ? r->token : "");
    return r;
  }
  Result<std::string> record(const std::string& token, const InfusionRecord& rec) override {
    auto r = inner_.record(token, rec);
    note("record", token, r, r ? *r : "");
    return r;
  }

 private:
  template <typename T>
  void note(std::string call, std::string presented, const Result<T>& r, std::string returned) {
    log.push_back({clock_.now_s(), std::move(call), std::move(presented),
                   r ? std::nullopt : std::optional<Errc>(r.code()), std::move(returned)});
  }

  DeviceTransport& inner_;
  const DeviceClock& clock_;
};

/// Checks a device transcript against the login/index flow. Returns an
/// empty string when it conforms.
inline std::string check_transcript(const std::vector<Exchange>& log) {
  if (log.empty() || log.front().call != "login") return "session does not start with login";
  std::set<std::string> seen;
  std::optional<std::string> held;
  bool expired_seen = false, recovered = false;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const auto& x = log[i];
    if (x.call != "login") {
      if (!held || x.presented != *held)
        return fmt::format("exchange {} presents a token that is not the latest one received", i);
    }
    if (!x.error) {
      if (x.returned.size() != 64) return fmt::format("exchange {} returned no token", i);
      if (!seen.insert(x.returned).second)
        return fmt::format("exchange {} returned a token seen before", i);
      held = x.returned;
      if (expired_seen && x.call == "index") recovered = true;
    } else if (*x.error == Errc::token_expired) {
      expired_seen = true;
      if (i + 1 >= log.size() || log[i + 1].call != "login")
        return fmt::format("token_expired at exchange {} not followed by login", i);
    } else if (*x.error != Errc::transport) {
      return fmt::format("exchange {} failed with {}", i, to_string(*x.error));
    }
  }
  if (!expired_seen) return "no expired-token request in the transcript";
  if (!recovered) return "no successful index after re-login";
  if (log.back().call != "record" || log.back().error) return "session did not end with a record";
  return {};
}

}  // namespace scenarios
