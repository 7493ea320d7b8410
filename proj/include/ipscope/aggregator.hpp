#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ipscope/clock.hpp"
#include "ipscope/model.hpp"
#include "ipscope/reputation.hpp"

namespace ipscope::aggregator {

struct WeightPolicy {
  /// Weight given to sources with no configured weight of their own.
  double default_weight = 1.0;
  /// provider_id -> feature -> weight
  std::map<std::string, std::map<FeatureKind, double>> overrides;
  double stale_dataset_factor = 0.5;
  /// Verdict at p = 0.5.
  bool tie_positive = true;

  /// Effective weight of `e`: an override when present, else `e.weight`.
  double weight_for(const Evidence& e) const;

  static WeightPolicy from_json(const json& j);
  json to_json() const;
};

/// Round-half-up of 100 * x to an integer percent.
int round_percent(double x);

/// Share of positive weight over the decisive items; nullopt when none.
std::optional<double> positive_share(const std::vector<Evidence>& evidence);

/// Weighted confidence score. Throws FeatureMismatch when an item's feature
/// differs from `feature`.
FeatureResult confidence_score(std::vector<Evidence> evidence, FeatureKind feature, bool tie_positive = true);

/// Everything gathered for one feature of one target, fresh or cached.
struct Fragment {
  std::vector<Evidence> evidence;
  std::optional<GeoRecord> geo;
  std::optional<PortScanResult> ports;
  std::optional<WhoisRecord> whois;
  std::optional<LivenessResult> liveness;
  std::optional<AbuseSummary> abuse;
  Timestamp fetched_at{};
  bool from_cache = false;
  bool stale = false;
};

void to_json(json& j, const Fragment& f);
void from_json(const json& j, Fragment& f);

using FragmentSet = std::map<FeatureKind, Fragment>;

/// Scores detection features, attaches probe results and stamps provenance.
AnalysisReport assemble_report(const Target& target, const FragmentSet& fragments, const WeightPolicy& policy,
                               Timestamp generated_at);

struct ComparisonColumn {
  std::string provider;
  FeatureKind feature;
};

struct ComparisonMatrix {
  std::vector<Target> rows;
  std::vector<ComparisonColumn> columns;
  /// rows x columns
  std::vector<std::vector<Verdict>> cells;
  /// Positives over decisive cells per column; nullopt when none decide.
  std::vector<std::optional<double>> column_positive_rate;
  /// Per row and feature: share of decisive providers backing the majority
  /// verdict.
  std::vector<std::map<FeatureKind, std::optional<double>>> agreement;

  json to_json() const;
  /// `target,provider,feature,verdict` rows.
  std::string to_csv() const;
  /// Grid with a dot for presence, a cross for absence, `?` for unknown.
  std::string render() const;
};

/// Queries each provider once per target. Distinct providers run
/// concurrently. A failed query leaves its cells unknown.
ComparisonMatrix comparison_matrix(const std::vector<Target>& targets,
                                   const std::vector<reputation::ProviderClientPtr>& providers,
                                   const FeatureSet& features, const Clock& clock = system_clock());

}  // namespace ipscope::aggregator
