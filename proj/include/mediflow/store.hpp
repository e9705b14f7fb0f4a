#pragma once

#include <json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mediflow {

/// Append-only JSON-lines log, one file per entity family, plus a full-state
/// snapshot written on clean shutdown.
///
/// Every line is the complete current state of one entity, so replay is an
/// upsert keyed by the entity's id and is idempotent. Loading reads the
/// snapshot first and then replays whatever was appended after it; a crash
/// between writing the snapshot and truncating the logs only replays lines
/// the snapshot already contains.
class EventLog {
 public:
  static constexpr std::array<std::string_view, 7> kFamilies = {
      "users", "devices", "profiles", "prescriptions", "proposals", "records", "tokens"};

  explicit EventLog(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
  }

  const std::filesystem::path& dir() const noexcept { return dir_; }

  std::filesystem::path log_path(std::string_view family) const {
    return dir_ / (std::string(family) + ".jsonl");
  }
  std::filesystem::path snapshot_path() const { return dir_ / "snapshot.json"; }

  void append(std::string_view family, const nlohmann::json& entity) {
    check_family(family);
    const std::string line = entity.dump() + '\n';
    std::lock_guard lock(mu_);
    auto& out = stream(family);
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.flush();
    if (!out) throw std::runtime_error("append failed: " + log_path(family).string());
  }

  /// Snapshot object (family -> array) or null when none exists.
  nlohmann::json read_snapshot() const {
    std::ifstream in(snapshot_path());
    if (!in) return nullptr;
    return nlohmann::json::parse(in);
  }

  /// Calls `fn` for every line appended since the last snapshot.
  void replay(std::string_view family, const std::function<void(const nlohmann::json&)>& fn) const {
    check_family(family);
    std::ifstream in(log_path(family));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error&) {
        // A torn final line from a crash mid-append is dropped; anything
        // earlier is corruption.
        if (in.peek() == std::char_traits<char>::eof()) break;
        throw std::runtime_error(log_path(family).string() + ":" + std::to_string(lineno) +
                                 ": corrupt log line");
      }
      fn(j);
    }
  }

  /// Writes the snapshot atomically, then truncates every log.
  void write_snapshot(const nlohmann::json& state) {
    std::lock_guard lock(mu_);
    const auto tmp = dir_ / "snapshot.json.tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << state.dump(2) << '\n';
      out.flush();
      if (!out) throw std::runtime_error("snapshot write failed");
    }
    std::filesystem::rename(tmp, snapshot_path());
    streams_.clear();
    for (auto family : kFamilies) std::ofstream(log_path(family), std::ios::trunc);
  }

 private:
  static void check_family(std::string_view family) {
    for (auto f : kFamilies)
      if (f == family) return;
    throw std::invalid_argument("unknown entity family: " + std::string(family));
  }

  std::ofstream& stream(std::string_view family) {
    auto it = streams_.find(std::string(family));
    if (it == streams_.end()) {
      it = streams_.emplace(std::string(family), std::ofstream(log_path(family), std::ios::app))
               .first;
      if (!it->second) throw std::runtime_error("cannot open " + log_path(family).string());
    }
    return it->second;
  }

  std::filesystem::path dir_;
  std::mutex mu_;
  std::map<std::string, std::ofstream> streams_;
};

}  // namespace mediflow
