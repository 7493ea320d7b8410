#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>

#include "ipscope/clock.hpp"
#include "ipscope/model.hpp"
#include "ipscope/net.hpp"

namespace ipscope::service {
class Service;
}

namespace ipscope::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kFailure = 3,
  kConsent = 4,
  kConflict = 5,
};

struct Env {
  const Clock* clock = &system_clock();
  NetMeter* meter = nullptr;
  /// Reads a secret such as a password. Unset means: prompt on the terminal
  /// with echo off, or read a line from stdin when it is not a terminal.
  std::function<std::string(std::string_view prompt)> read_secret;
  /// Called once `serve` is accepting connections.
  std::function<void(service::Service& svc, int port)> on_serving;
};

/// Runs one command. Data goes to `out`, diagnostics to `err`.
int run(int argc, const char* const argv[], std::ostream& out, std::ostream& err, Env env = {});

/// Human-readable report with dot/cross verdict glyphs.
std::string render_report(const AnalysisReport& report);

}  // namespace ipscope::cli
