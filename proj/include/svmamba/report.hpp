#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "sparse.hpp"

namespace svmamba {

/// Machine-readable command outcome, serialized as key=value lines:
///   command=<name>
///   config.<key>=<value>     (echo)
///   metric.<name>=<value>
///   timing.<name>=<seconds>  (excluded from determinism comparisons)
///   check.<name>=pass|fail   (each check exactly once)
///   warning=<text>
///   status=pass|fail
class RunReport {
 public:
  explicit RunReport(std::string command) : command_(std::move(command)) {}

  const std::string& command() const { return command_; }

  void config(const std::string& key, const std::string& value) { config_.emplace_back(key, value); }

  /// Echoes a multi-line key=value block.
  void config_block(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq != std::string::npos) config(line.substr(0, eq), line.substr(eq + 1));
    }
  }

  void metric(const std::string& name, double value) { metrics_.emplace_back(name, format_double(value)); }
  void metric(const std::string& name, std::uint64_t value) { metrics_.emplace_back(name, std::to_string(value)); }
  void metric_text(const std::string& name, const std::string& value) { metrics_.emplace_back(name, value); }
  void timing(const std::string& name, double seconds) { timings_.emplace_back(name, format_double(seconds)); }

  void check(const std::string& name, bool passed) {
    for (const auto& c : checks_)
      if (c.first == name) throw_argument("check '" + name + "' declared twice");
    checks_.emplace_back(name, passed);
  }

  void warn(const std::string& text) { warnings_.push_back(text); }

  bool passed() const {
    for (const auto& c : checks_)
      if (!c.second) return false;
    return true;
  }

  bool has_check(const std::string& name) const {
    for (const auto& c : checks_)
      if (c.first == name) return true;
    return false;
  }

  bool check_passed(const std::string& name) const {
    for (const auto& c : checks_)
      if (c.first == name) return c.second;
    throw_argument("no check named '" + name + "'");
  }

  const std::vector<std::pair<std::string, bool>>& checks() const { return checks_; }
  const std::vector<std::string>& warnings() const { return warnings_; }
  const std::vector<std::pair<std::string, std::string>>& metrics() const { return metrics_; }

  std::string metric_value(const std::string& name) const {
    for (const auto& m : metrics_)
      if (m.first == name) return m.second;
    throw_argument("no metric named '" + name + "'");
  }

  std::string serialize(bool with_timings = true) const {
    std::string out = "command=" + command_ + "\n";
    for (const auto& [k, v] : config_) out += "config." + k + "=" + v + "\n";
    for (const auto& [k, v] : metrics_) out += "metric." + k + "=" + v + "\n";
    if (with_timings)
      for (const auto& [k, v] : timings_) out += "timing." + k + "=" + v + "\n";
    for (const auto& [k, ok] : checks_) out += "check." + k + "=" + (ok ? "pass" : "fail") + "\n";
    for (const auto& w : warnings_) out += "warning=" + w + "\n";
    out += std::string("status=") + (passed() ? "pass" : "fail") + "\n";
    return out;
  }

 private:
  std::string command_;
  std::vector<std::pair<std::string, std::string>> config_;
  std::vector<std::pair<std::string, std::string>> metrics_;
  std::vector<std::pair<std::string, std::string>> timings_;
  std::vector<std::pair<std::string, bool>> checks_;
  std::vector<std::string> warnings_;
};

/// Drops "timing." lines from a serialized report for determinism diffs.
inline std::string strip_timings(const std::string& report) {
  std::istringstream in(report);
  std::string line, out;
  while (std::getline(in, line))
    if (line.rfind("timing.", 0) != 0) out += line + "\n";
  return out;
}

}  // namespace svmamba
