// mediflow: server, simulated pump, device fleet and benchmarks in one binary.
//
//   mediflow serve --port 8080 --data ./data --ttl 300
//   mediflow seed-data --data ./data
//   mediflow device --server http://localhost:8080 --username dev1 --password pw
//       --mac AA:BB:CC:DD:EE:01 --realtime=false
//   mediflow fleet --server http://localhost:8080 --devices 20
//   mediflow bench load --local --users 20,50,100 --duration 60
//   mediflow bench accuracy --volume 2 --rate 4 --runs 5 --seeds 1,2,3,4,5 --out t2.csv
//
// Every option can also come from a TOML file given by --config or the
// MEDIFLOW_CONFIG environment variable; command-line flags win.

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "mediflow/accuracy.hpp"
#include "mediflow/http_server.hpp"
#include "mediflow/load.hpp"
#include "mediflow/pump.hpp"
#include "mediflow/report.hpp"
#include "mediflow/seed.hpp"
#include "mediflow/service.hpp"
#include "mediflow/transport.hpp"

namespace {

using namespace mediflow;

struct ServerOpts {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "./data";
  double ttl_s = 300;
  std::size_t threads = 64;
  std::string static_dir;
  bool persist_tokens = false;
  double poll_advice_s = 60;
  bool seed_demo = false;
  int load_users = 0;
};

struct PumpOpts {
  double poll_interval_s = 60;
  double diameter_mm = 14.50;
  double full_step_mm = 0.0018;
  double density_g_ml = 1.0;
  double drop_ul = 50;
  double sigma = 0.015;
  double dead_volume_ul = -1;
  bool realtime = false;
};

struct DeviceOpts {
  std::string server_url = "http://127.0.0.1:8080";
  std::string username = "dev1";
  std::string password = "pw";
  std::string mac = "AA:BB:CC:DD:EE:01";
  std::string patient_id = "p-001";
  std::uint64_t seed = 1;
  std::string trace_path;
};

struct FleetOpts {
  std::string server_url = "http://127.0.0.1:8080";
  int devices = 10;
  std::uint64_t seed_base = 1;
  std::string trace_dir;
};

struct LoadOpts {
  std::string server_url;
  bool local = false;
  std::vector<int> users{20, 50, 100};
  double duration_s = 60;
  double think_s = 0;
  bool include_records = false;
  std::string out;
};

struct AccuracyOpts {
  double volume_ml = 2;
  double rate_ml_h = 4;
  int runs = 5;
  std::vector<std::uint64_t> seeds;
  bool zero_noise = false;
  std::string out;
  std::string trace_dir;
};

SyringeKinematics kinematics_of(const PumpOpts& p) {
  return {p.full_step_mm, p.diameter_mm, p.density_g_ml};
}

ServiceConfig service_config(const ServerOpts& s) {
  ServiceConfig c;
  c.token_ttl = Millis{static_cast<std::int64_t>(s.ttl_s * 1000)};
  if (!s.data_dir.empty()) c.data_dir = s.data_dir;
  c.persist_tokens = s.persist_tokens;
  c.poll_advice_s = s.poll_advice_s;
  return c;
}

void check(const Status& s, const std::string& what) {
  if (!s) throw std::runtime_error(what + ": " + std::string(to_string(s.code())) + " " +
                                   s.error().detail);
}

/// Blocks SIGINT/SIGTERM for every thread and returns a waiter that stops `stop`.
std::jthread signal_waiter(std::function<void()> stop) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return std::jthread([set, stop = std::move(stop)] {
    int sig = 0;
    sigwait(&set, &sig);
    spdlog::info("signal {}, shutting down", sig);
    stop();
  });
}

int cmd_serve(const ServerOpts& o) {
  auto waiter_stop = std::make_shared<std::function<void()>>();
  auto waiter = signal_waiter([waiter_stop] {
    if (*waiter_stop) (*waiter_stop)();
  });
  Service service(service_config(o));
  if (o.seed_demo) check(seed_demo(service), "seed demo");
  if (o.load_users > 0) check(seed_load_accounts(service, o.load_users), "seed load accounts");
  HttpServerOptions ho{o.host, o.port, o.threads, std::nullopt};
  if (!o.static_dir.empty()) ho.static_dir = o.static_dir;
  HttpServer server(service, ho);
  *waiter_stop = [&server] { server.stop(); };
  // Wakes the waiter if it is still parked in sigwait and joins it while
  // `server` is alive, on every exit path.
  struct JoinWaiter {
    std::jthread& t;
    ~JoinWaiter() {
      pthread_kill(t.native_handle(), SIGTERM);
      t.join();
    }
  } join_waiter{waiter};
  spdlog::info("serving on http://{}:{} (data {})", o.host, o.port, o.data_dir);
  server.run();
  service.shutdown();
  spdlog::info("snapshot written, bye");
  return 0;
}

int cmd_seed(const ServerOpts& o) {
  Service service(service_config(o));
  check(seed_demo(service), "seed demo");
  if (o.load_users > 0) check(seed_load_accounts(service, o.load_users), "seed load accounts");
  const DemoSeed demo;
  std::cout << "seeded " << o.data_dir << ": physician " << demo.physician << "/"
            << demo.physician_password << ", device " << demo.device_username << "/"
            << demo.device_password << " mac " << demo.mac << " patient " << demo.patient_id
            << "\n";
  return 0;
}

DeviceConfig device_config(const DeviceOpts& d, const PumpOpts& p) {
  DeviceConfig c;
  c.username = d.username;
  c.password = d.password;
  c.mac = d.mac;
  c.patient_id = d.patient_id;
  c.kinematics = kinematics_of(p);
  c.poll_interval_s = p.poll_interval_s;
  c.drop_quantum_ul = p.drop_ul;
  c.noise = {p.sigma, p.dead_volume_ul, d.seed};
  return c;
}

int run_one_device(const DeviceConfig& config, const std::string& server_url, bool realtime,
                   const std::string& trace_path) {
  HttpTransport transport(server_url);
  std::unique_ptr<DeviceClock> clock;
  if (realtime) clock = std::make_unique<RealtimeDeviceClock>();
  else clock = std::make_unique<SimulatedDeviceClock>(SystemClock{}.now());
  Device device(config, transport, *clock);
  device.on_transition = [&config](const Transition& t) {
    spdlog::info("[{}] t={:.1f}s {} -> {} ({})", config.username, t.t_s, to_string(t.from),
                 to_string(t.to), t.reason);
  };
  device.run();
  const auto& trace = device.trace();
  spdlog::info("[{}] {}: delivered {:.4f} mL, mean rate {:.4f} mL/h over {:.1f} s, record {}",
               config.username, to_string(device.phase()), trace.delivered_volume_ml,
               trace.mean_rate_ml_h, trace.duration_s,
               device.record_posted() ? "posted" : "not posted");
  if (!trace_path.empty()) write_trace_csv(trace, trace_path);
  return device.phase() == Phase::Completed ? 0 : 1;
}

int cmd_device(const DeviceOpts& d, const PumpOpts& p) {
  return run_one_device(device_config(d, p), d.server_url, p.realtime, d.trace_path);
}

int cmd_fleet(const FleetOpts& f, const PumpOpts& p) {
  std::vector<int> exit_codes(static_cast<std::size_t>(f.devices), 1);
  {
    std::vector<std::jthread> threads;
    for (int i = 1; i <= f.devices; ++i) {
      threads.emplace_back([&, i] {
        const auto account = load_account(i);
        DeviceOpts d;
        d.username = account.username;
        d.password = account.password;
        d.mac = account.mac;
        d.patient_id = account.patient_id;
        d.seed = f.seed_base + std::uint64_t(i - 1);
        const std::string trace =
            f.trace_dir.empty() ? ""
                                : (std::filesystem::path(f.trace_dir) / (account.username + ".csv"))
                                      .string();
        try {
          exit_codes[std::size_t(i - 1)] =
              run_one_device(device_config(d, p), f.server_url, p.realtime, trace);
        } catch (const std::exception& e) {
          spdlog::error("[{}] {}", account.username, e.what());
        }
      });
    }
  }
  int failed = 0;
  for (int c : exit_codes) failed += c != 0;
  spdlog::info("fleet done: {}/{} completed", f.devices - failed, f.devices);
  return failed ? 1 : 0;
}

int cmd_bench_load(const LoadOpts& l) {
  if (l.local == !l.server_url.empty())
    throw CLI::ValidationError("bench load", "give exactly one of --server or --local");
  std::unique_ptr<Service> service;
  std::unique_ptr<HttpServer> server;
  std::string url = l.server_url;
  int max_users = 0;
  for (int u : l.users) max_users = std::max(max_users, u);
  if (l.local) {
    ServiceConfig config;
    config.pbkdf2_iterations = 1000;
    service = std::make_unique<Service>(config);
    check(seed_load_accounts(*service, max_users), "seed load accounts");
    server = std::make_unique<HttpServer>(
        *service, HttpServerOptions{"127.0.0.1", 0, std::size_t(std::max(8, max_users)), {}});
    server->start();
    url = server->base_url();
  }

  std::vector<LoadReport> reports;
  for (int users : l.users) {
    LoadOptions lo;
    lo.base_url = url;
    lo.users = users;
    lo.duration_s = l.duration_s;
    lo.think_time_s = l.think_s;
    lo.include_records = l.include_records;
    spdlog::info("load: {} users for {} s", users, l.duration_s);
    reports.push_back(run_load(lo));
  }

  std::cout << fmt::format("{:>10} {:>14} {:>18} {:>18} {:>18} {:>22} {:>8}\n", "User group",
                           "Total requests", "Avg response (ms)", "Max response (ms)",
                           "Min response (ms)", "Avg throughput (rps)", "Errors");
  for (const auto& r : reports)
    std::cout << fmt::format("{:>10} {:>14} {:>18.2f} {:>18.2f} {:>18.2f} {:>22.2f} {:>8}\n",
                             r.user_count, r.total_requests, r.avg_response_ms,
                             r.max_response_ms, r.min_response_ms, r.avg_throughput_rps,
                             r.errors);

  if (!l.out.empty()) {
    const std::filesystem::path out(l.out);
    const auto format = report_format_from_path(out);
    for (const auto& r : reports) {
      auto path = out;
      if (reports.size() > 1)
        path = out.parent_path() /
               (out.stem().string() + "_" + std::to_string(r.user_count) + out.extension().string());
      emit_report(r, format, path);
    }
  }
  bool consistent = true;
  for (const auto& r : reports) {
    std::int64_t sum = 0;
    for (auto n : r.per_user_requests) sum += n;
    consistent &= sum == r.total_requests && r.min_response_ms <= r.avg_response_ms &&
                  r.avg_response_ms <= r.max_response_ms;
  }
  if (server) server->stop();
  return consistent ? 0 : 1;
}

int cmd_bench_accuracy(const AccuracyOpts& a, const PumpOpts& p) {
  auto seeds = a.seeds;
  if (seeds.empty()) seeds = default_seeds(a.runs);
  if (int(seeds.size()) != a.runs)
    throw CLI::ValidationError("bench accuracy", "--runs must equal the number of --seeds");
  AccuracyOptions options;
  options.kinematics = kinematics_of(p);
  options.efficiency_sigma = a.zero_noise ? 0.0 : p.sigma;
  options.dead_volume_max_ul = a.zero_noise ? 0.0 : p.dead_volume_ul;
  options.drop_quantum_ul = p.drop_ul;
  options.poll_interval_s = p.poll_interval_s;
  options.keep_traces = !a.trace_dir.empty();
  const auto report = run_accuracy({a.volume_ml, a.rate_ml_h}, seeds, options);
  std::cout << render_report(report, ReportFormat::csv);
  if (!a.out.empty()) emit_report(report, report_format_from_path(a.out), a.out);
  if (!a.trace_dir.empty()) {
    std::filesystem::create_directories(a.trace_dir);
    for (std::size_t i = 0; i < report.traces.size(); ++i)
      write_trace_csv(report.traces[i],
                      (std::filesystem::path(a.trace_dir) /
                       fmt::format("trace_{}ml_{}mlh_run{}.csv", a.volume_ml, a.rate_ml_h, i + 1))
                          .string());
  }
  bool consistent = true;
  double v = 0, r = 0;
  for (const auto& row : report.rows) {
    consistent &= row.pct_error_volume == percent_error(row.delivered_volume_ml, a.volume_ml);
    v += row.pct_error_volume;
    r += row.pct_error_rate;
  }
  if (!report.rows.empty()) {
    consistent &= report.avg_pct_error_volume == round2(v / double(report.rows.size()));
    consistent &= report.avg_pct_error_rate == round2(r / double(report.rows.size()));
  }
  return consistent ? 0 : 1;
}

void add_pump_options(CLI::App* cmd, PumpOpts& p) {
  cmd->add_option("--poll-interval", p.poll_interval_s, "Seconds between index polls");
  cmd->add_option("--diameter", p.diameter_mm, "Syringe inner diameter (mm)");
  cmd->add_option("--step-mm", p.full_step_mm, "Plunger travel per full step (mm)");
  cmd->add_option("--density", p.density_g_ml, "Fluid density (g/mL)");
  cmd->add_option("--drop-ul", p.drop_ul, "Drop quantum (uL)");
  cmd->add_option("--sigma", p.sigma, "Std. dev. of per-run step efficiency");
  cmd->add_option("--dead-volume", p.dead_volume_ul,
                  "Upper bound of dead volume draw (uL); negative = one drop");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mediflow: secure infusion pump server, simulator and benchmarks"};
  app.set_config("--config", "", "TOML config file")->envname("MEDIFLOW_CONFIG");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  ServerOpts server;
  PumpOpts pump;
  DeviceOpts device;
  FleetOpts fleet;
  LoadOpts load;
  AccuracyOpts accuracy;

  auto* serve = app.add_subcommand("serve", "Run the login/index API server");
  serve->add_option("--host", server.host);
  serve->add_option("--port", server.port)->check(CLI::Range(0, 65535));
  serve->add_option("--data", server.data_dir, "Data directory");
  serve->add_option("--ttl", server.ttl_s, "Token TTL (s)")->check(CLI::PositiveNumber);
  serve->add_option("--threads", server.threads, "Worker threads");
  serve->add_option("--static-dir", server.static_dir, "Directory served under /app");
  serve->add_flag("--persist-tokens", server.persist_tokens, "Keep tokens across restarts");
  serve->add_option("--poll-advice", server.poll_advice_s, "Advised poll interval (s)");
  serve->add_flag("--seed-demo", server.seed_demo, "Create the demo accounts on start");
  serve->add_option("--load-users", server.load_users, "Create N load-test device accounts");

  auto* seed = app.add_subcommand("seed-data", "Create demo physician, device and prescription");
  seed->add_option("--data", server.data_dir, "Data directory");
  seed->add_option("--load-users", server.load_users, "Also create N load-test device accounts");

  auto* dev = app.add_subcommand("device", "Run one simulated pump against a server");
  dev->add_option("--server", device.server_url);
  dev->add_option("--username", device.username);
  dev->add_option("--password", device.password);
  dev->add_option("--mac", device.mac);
  dev->add_option("--patient", device.patient_id, "Patient id sent to the index API");
  dev->add_option("--seed", device.seed, "Noise seed");
  dev->add_option("--trace", device.trace_path, "Write the drop trace CSV here");
  dev->add_flag("--realtime,!--simulated", pump.realtime, "Wall-clock instead of simulated time");
  add_pump_options(dev, pump);

  auto* fl = app.add_subcommand("fleet", "Run N simulated pumps (load accounts) in parallel");
  fl->add_option("--server", fleet.server_url);
  fl->add_option("--devices", fleet.devices)->check(CLI::PositiveNumber);
  fl->add_option("--seed-base", fleet.seed_base);
  fl->add_option("--trace-dir", fleet.trace_dir);
  fl->add_flag("--realtime,!--simulated", pump.realtime);
  add_pump_options(fl, pump);

  auto* bench = app.add_subcommand("bench", "Evaluation harness");
  bench->require_subcommand(1);
  auto* bl = bench->add_subcommand("load", "Closed-loop multi-user throughput/latency");
  bl->add_option("--server", load.server_url, "Server to load");
  bl->add_flag("--local", load.local, "Start a loopback server with seeded load accounts");
  bl->add_option("--users", load.users, "User groups")->delimiter(',')->check(CLI::PositiveNumber);
  bl->add_option("--duration", load.duration_s, "Seconds per group")->check(CLI::PositiveNumber);
  bl->add_option("--think", load.think_s, "Think time between requests (s)");
  bl->add_flag("--include-records", load.include_records, "Add infusion-record posts");
  bl->add_option("--out", load.out, "Report path (.csv or .json)");

  auto* ba = bench->add_subcommand("accuracy", "Repeated simulated infusions and %error table");
  ba->add_option("--volume", accuracy.volume_ml)->check(CLI::PositiveNumber);
  ba->add_option("--rate", accuracy.rate_ml_h)->check(CLI::PositiveNumber);
  ba->add_option("--runs", accuracy.runs)->check(CLI::PositiveNumber);
  ba->add_option("--seeds", accuracy.seeds)->delimiter(',');
  ba->add_flag("--zero-noise", accuracy.zero_noise);
  ba->add_option("--out", accuracy.out, "Report path (.csv or .json)");
  ba->add_option("--trace-dir", accuracy.trace_dir, "Write one drop trace CSV per run");
  add_pump_options(ba, pump);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  spdlog::debug("effective configuration\n{}", app.config_to_str(true, false));

  try {
    if (*serve) return cmd_serve(server);
    if (*seed) return cmd_seed(server);
    if (*dev) return cmd_device(device, pump);
    if (*fl) return cmd_fleet(fleet, pump);
    if (*bl) return cmd_bench_load(load);
    if (*ba) return cmd_bench_accuracy(accuracy, pump);
  } catch (const CLI::ValidationError& e) {
    std::cerr << e.what() << "\n" << app.help();
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 2;
}
