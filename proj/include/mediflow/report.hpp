#pragma once

#include <fmt/format.h>

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "mediflow/accuracy.hpp"
#include "mediflow/load.hpp"
#include "mediflow/wire.hpp"

namespace mediflow {

enum class ReportFormat { csv, json };

inline ReportFormat report_format_from_path(const std::filesystem::path& path) {
  return path.extension() == ".json" ? ReportFormat::json : ReportFormat::csv;
}

// Per-second series behind the throughput and response-time curves.
inline std::string to_csv(const LoadReport& r) {
  std::string out = "second,throughput_rps,avg_response_ms\n";
  for (const auto& s : r.series)
    out += fmt::format("{},{:.2f},{:.3f}\n", s.second, s.throughput_rps, s.avg_response_ms);
  return out;
}

inline json to_json_value(const LoadReport& r) {
  json series = json::array();
  for (const auto& s : r.series)
    series.push_back({{"second", s.second},
                      {"requests", s.requests},
                      {"throughput_rps", s.throughput_rps},
                      {"avg_response_ms", s.avg_response_ms}});
  return json{{"user_count", r.user_count},
              {"duration_s", r.duration_s},
              {"total_requests", r.total_requests},
              {"errors", r.errors},
              {"avg_response_ms", r.avg_response_ms},
              {"max_response_ms", r.max_response_ms},
              {"min_response_ms", r.min_response_ms},
              {"avg_throughput_rps", r.avg_throughput_rps},
              {"per_user_requests", r.per_user_requests},
              {"series", series}};
}

// Same column order as the evaluation table, one row per experiment plus
// an "avg" row carrying the mean errors.
inline std::string to_csv(const AccuracyReport& r) {
  std::string out =
      "setting_volume_ml,setting_rate_ml_h,experiment,delivered_volume_ml,pct_error_volume,"
      "avg_rate_ml_h,pct_error_rate\n";
  for (const auto& row : r.rows)
    out += fmt::format("{:.2f},{:.2f},{},{:.2f},{:.2f},{:.2f},{:.2f}\n", r.setting.volume_ml,
                       r.setting.rate_ml_h, row.experiment, row.delivered_volume_ml,
                       row.pct_error_volume, row.avg_rate_ml_h, row.pct_error_rate);
  out += fmt::format("{:.2f},{:.2f},avg,,{:.2f},,{:.2f}\n", r.setting.volume_ml,
                     r.setting.rate_ml_h, r.avg_pct_error_volume, r.avg_pct_error_rate);
  return out;
}

inline json to_json_value(const AccuracyReport& r) {
  json rows = json::array();
  for (const auto& row : r.rows)
    rows.push_back({{"experiment", row.experiment},
                    {"seed", row.seed},
                    {"delivered_volume_ml", row.delivered_volume_ml},
                    {"pct_error_volume", row.pct_error_volume},
                    {"avg_rate_ml_h", row.avg_rate_ml_h},
                    {"pct_error_rate", row.pct_error_rate},
                    {"raw_delivered_volume_ml", row.raw_delivered_volume_ml},
                    {"raw_avg_rate_ml_h", row.raw_avg_rate_ml_h}});
  return json{{"setting", {{"volume_ml", r.setting.volume_ml}, {"rate_ml_h", r.setting.rate_ml_h}}},
              {"rows", rows},
              {"avg_pct_error_volume", r.avg_pct_error_volume},
              {"avg_pct_error_rate", r.avg_pct_error_rate}};
}

template <typename Report>
std::string render_report(const Report& report, ReportFormat format) {
  return format == ReportFormat::csv ? to_csv(report) : to_json_value(report).dump(2) + "\n";
}

template <typename Report>
void emit_report(const Report& report, ReportFormat format, const std::filesystem::path& path) {
  const std::string bytes = render_report(report, format);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace mediflow
