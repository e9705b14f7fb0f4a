#include <gtest/gtest.h>

#include <fstream>

#include "fixtures.hpp"
#include "mediflow/http_server.hpp"
#include "mediflow/report.hpp"

using namespace mediflow;

namespace {

struct TableRow {
  double delivered, pct_volume, rate, pct_rate;
};

// Evaluation table as published: measured values and their printed errors.
const std::vector<TableRow> kSetting1 = {{2.05, 2.5, 3.96, 1},
                                         {2.07, 3.5, 3.99, 0.25},
                                         {2.01, 0.5, 3.95, 1.25},
                                         {2.08, 4, 4.1, 2.5},
                                         {2.06, 3, 3.98, 0.5}};
const std::vector<TableRow> kSetting2 = {{5.03, 0.6, 4.97, 0.6},
                                         {4.93, 1.4, 4.95, 1},
                                         {5.07, 1.4, 5.05, 1},
                                         {5.11, 2.2, 5.03, 0.6},
                                         {4.99, 0.2, 4.94, 1.2}};

AccuracyReport tabulate(const AccuracySetting& setting, const std::vector<TableRow>& rows) {
  AccuracyReport report;
  report.setting = setting;
  int i = 0;
  for (const auto& r : rows)
    report.rows.push_back(make_accuracy_row(++i, setting, r.delivered, r.rate));
  finalize_averages(report);
  return report;
}

}  // namespace

TEST(PercentError, HandFedExamples) {
  EXPECT_EQ(percent_error(2.05, 2), 2.5);
  EXPECT_EQ(percent_error(3.96, 4), 1.0);
  EXPECT_THROW(percent_error(1, 0), std::domain_error);
}

TEST(PercentError, EveryTableRowRecomputesExactly) {
  for (const auto& [setting, rows] :
       {std::pair{AccuracySetting{2, 4}, kSetting1}, std::pair{AccuracySetting{5, 5}, kSetting2}}) {
    const auto report = tabulate(setting, rows);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      EXPECT_EQ(report.rows[i].pct_error_volume, rows[i].pct_volume) << i;
      EXPECT_EQ(report.rows[i].pct_error_rate, rows[i].pct_rate) << i;
    }
  }
}

TEST(PercentError, TableAveragesRecomputeExactly) {
  const auto a = tabulate({2, 4}, kSetting1);
  EXPECT_EQ(a.avg_pct_error_volume, 2.7);
  EXPECT_EQ(a.avg_pct_error_rate, 1.1);
  const auto b = tabulate({5, 5}, kSetting2);
  EXPECT_EQ(b.avg_pct_error_volume, 1.16);
  EXPECT_EQ(b.avg_pct_error_rate, 0.88);
}

TEST(Accuracy, ZeroNoiseErrorsBelowOneDropQuantum) {
  AccuracyOptions opts;
  opts.efficiency_sigma = 0;
  opts.dead_volume_max_ul = 0;
  for (const auto& setting : {AccuracySetting{2, 4}, AccuracySetting{5, 5}}) {
    const auto report = run_accuracy(setting, default_seeds(2), opts);
    for (const auto& row : report.rows) {
      EXPECT_LT(row.pct_error_volume, 50.0 / (setting.volume_ml * 1000) * 100);
      EXPECT_LE(row.pct_error_rate, 0.5);
    }
  }
}

TEST(Accuracy, SeedsAreReproducible) {
  const auto a = run_accuracy({2, 4}, {3, 4});
  const auto b = run_accuracy({2, 4}, {3, 4});
  EXPECT_EQ(render_report(a, ReportFormat::csv), render_report(b, ReportFormat::csv));
  EXPECT_EQ(render_report(a, ReportFormat::json), render_report(b, ReportFormat::json));
}

TEST(Accuracy, DefaultSeedsAreOneToN) {
  EXPECT_EQ(default_seeds(3), (std::vector<std::uint64_t>{1, 2, 3}));
  EXPECT_TRUE(default_seeds(0).empty());
}

TEST(Report, AccuracyCsvFollowsTableColumns) {
  const auto csv = to_csv(tabulate({2, 4}, kSetting1));
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "setting_volume_ml,setting_rate_ml_h,experiment,delivered_volume_ml,pct_error_volume,"
            "avg_rate_ml_h,pct_error_rate");
  EXPECT_NE(csv.find("2.00,4.00,1,2.05,2.50,3.96,1.00\n"), std::string::npos);
  EXPECT_NE(csv.find("2.00,4.00,avg,,2.70,,1.10\n"), std::string::npos);
}

TEST(Report, LoadCsvSchema) {
  LoadReport r;
  r.series = {{0, 10, 10, 1.5}, {1, 12, 12, 2.25}};
  EXPECT_EQ(to_csv(r), "second,throughput_rps,avg_response_ms\n0,10.00,1.500\n1,12.00,2.250\n");
}

TEST(Report, EmitIsByteDeterministic) {
  fixtures::TempDir dir;
  const auto report = tabulate({5, 5}, kSetting2);
  for (auto format : {ReportFormat::csv, ReportFormat::json}) {
    const auto a = dir.path() / "a", b = dir.path() / "b";
    emit_report(report, format, a);
    emit_report(report, format, b);
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
    EXPECT_EQ(sa, sb);
    EXPECT_FALSE(sa.empty());
  }
}

TEST(Report, UnwritablePathThrows) {
  EXPECT_THROW(emit_report(LoadReport{}, ReportFormat::csv, "/nonexistent-dir/x.csv"),
               std::runtime_error);
}

TEST(Report, FormatFromExtension) {
  EXPECT_EQ(report_format_from_path("r.json"), ReportFormat::json);
  EXPECT_EQ(report_format_from_path("r.csv"), ReportFormat::csv);
  EXPECT_EQ(report_format_from_path("r"), ReportFormat::csv);
}

TEST(Load, UnreachableServerAborts) {
  LoadOptions o;
  o.base_url = "http://127.0.0.1:1";
  o.duration_s = 1;
  EXPECT_THROW(run_load(o), std::runtime_error);
}

TEST(Load, RejectsBadArguments) {
  LoadOptions o;
  o.users = 0;
  EXPECT_THROW(run_load(o), std::invalid_argument);
}

TEST(Load, SingleUserWithThinkTimeIsBounded) {
  Service service(fixtures::fast_config());
  ASSERT_TRUE(seed_load_accounts(service, 1));
  HttpServer server(service, {"127.0.0.1", 0, 8, {}});
  server.start();
  LoadOptions o;
  o.base_url = server.base_url();
  o.users = 1;
  o.duration_s = 10;
  o.think_time_s = 1;
  const auto r = run_load(o);
  EXPECT_GE(r.total_requests, 5);
  EXPECT_LE(r.total_requests, 10);
  EXPECT_EQ(r.errors, 0);
  EXPECT_LE(r.min_response_ms, r.avg_response_ms);
  EXPECT_LE(r.avg_response_ms, r.max_response_ms);
  EXPECT_DOUBLE_EQ(r.avg_throughput_rps, double(r.total_requests) / 10);
  EXPECT_EQ(r.series.size(), 10u);
}

TEST(Load, CountsAreExactAcrossUsers) {
  Service service(fixtures::fast_config());
  ASSERT_TRUE(seed_load_accounts(service, 8));
  HttpServer server(service, {"127.0.0.1", 0, 16, {}});
  server.start();
  LoadOptions o;
  o.base_url = server.base_url();
  o.users = 8;
  o.duration_s = 2;
  o.include_records = true;
  const auto r = run_load(o);
  std::int64_t sum = 0, per_second = 0;
  for (auto n : r.per_user_requests) sum += n;
  for (const auto& s : r.series) per_second += s.requests;
  EXPECT_EQ(r.total_requests, sum);
  EXPECT_EQ(r.total_requests, per_second);
  EXPECT_EQ(r.errors, 0);
  std::size_t records = 0;
  for (int i = 1; i <= 8; ++i) records += service.records(load_account(i).patient_id).size();
  EXPECT_GT(records, 0u);
}
