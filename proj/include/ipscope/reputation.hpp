#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ipscope/clock.hpp"
#include "ipscope/error.hpp"
#include "ipscope/model.hpp"
#include "ipscope/net.hpp"

namespace ipscope::reputation {

/// How a response field turns into a verdict.
enum class FieldKind {
  flag,   ///< boolean: true -> positive
  score,  ///< integer 0..100: >= threshold -> positive
};

struct FieldRule {
  std::string pointer;  ///< JSON pointer into the response body
  FieldKind kind = FieldKind::flag;
};

/// JSON pointers for the abuse summary. Report member names are relative to
/// each element of the `reports` array.
struct AbuseFieldMap {
  std::string score = "/data/abuseConfidenceScore";
  std::string total_reports = "/data/totalReports";
  std::string reports = "/data/reports";
  std::string is_tor = "/data/isTor";
  std::string isp = "/data/isp";
  std::string report_time = "reportedAt";
  std::string report_categories = "categories";
  std::string report_comment = "comment";
  std::string report_place = "reporterCountryCode";
};

struct Endpoints {
  std::string check = "/check";
  /// Report-list endpoint; empty means the check endpoint carries reports.
  std::string reports;
};

struct ProviderConfig {
  std::string id;
  std::string base_url;
  /// Environment variable holding the API key; empty when none is needed.
  std::string api_key_env;
  std::string api_key_header = "Key";
  Endpoints endpoints;
  std::string ip_param = "ipAddress";
  std::string window_param = "maxAgeInDays";
  std::map<FeatureKind, FieldRule> field_map;
  std::optional<AbuseFieldMap> abuse;
  std::map<FeatureKind, double> feature_weights;
  int timeout_ms = 5000;
  int max_age_days = 90;
  int cooldown_s = 60;
  bool enabled = true;

  FeatureSet supported_features() const;
  double weight_for(FeatureKind f) const;
};

/// Parses one adapter object. Throws InvalidArgument on contract violations.
ProviderConfig provider_from_json(const json& j);
json provider_to_json(const ProviderConfig& cfg);
/// Parses an array of adapters and checks id uniqueness.
std::vector<ProviderConfig> providers_from_json(const json& j);

enum class Outcome { ok, timeout, http_error, parse_error };
std::string_view to_string(Outcome o) noexcept;

struct ProviderResponse {
  std::string provider_id;
  int http_status = 0;
  json body;
  std::int64_t elapsed_ms = 0;
  Outcome outcome = Outcome::http_error;
  std::string detail;
};

class ProviderUnavailable : public Error {
 public:
  explicit ProviderUnavailable(ProviderResponse resp);
  const ProviderResponse& response() const noexcept { return response_; }

 private:
  ProviderResponse response_;
};

/// HTTP client for one provider. Calls to the same client are serialized so
/// rate-limit state stays consistent; distinct clients run independently.
class ProviderClient {
 public:
  explicit ProviderClient(ProviderConfig cfg, const Clock& clock = system_clock(), NetMeter* meter = nullptr);

  /// One GET against the check endpoint. Never throws; failures land in
  /// `outcome`. Connection failures are retried once within a total budget
  /// of twice `timeout_ms`.
  ProviderResponse query(const Target& ip, const FeatureSet& features);

  /// Fetches and normalizes the report list. Throws ProviderUnavailable.
  AbuseSummary fetch_abuse_summary(const Target& ip);

  const ProviderConfig& config() const noexcept { return cfg_; }
  bool cooling_down() const;

 private:
  ProviderResponse get(const std::string& path, const Target& ip);

  ProviderConfig cfg_;
  const Clock* clock_;
  NetMeter* meter_;
  mutable std::mutex mu_;
  Timestamp cooldown_until_{};
};

using ProviderClientPtr = std::shared_ptr<ProviderClient>;

/// Maps a response onto Evidence for every requested feature the adapter
/// knows. Failed responses and missing fields give unknown Evidence that keeps
/// its configured weight.
std::vector<Evidence> to_evidence(const ProviderResponse& resp, const ProviderConfig& cfg, const FeatureSet& features,
                                  Timestamp fetched_at, int threat_threshold = 50);

/// Builds an AbuseSummary from a body. Reports older than the window are
/// dropped and counted. Throws SerializationError on contract violations
/// (missing or out-of-range score).
AbuseSummary normalize_abuse(const json& body, const ProviderConfig& cfg, Timestamp now);

}  // namespace ipscope::reputation
