#include "ipscope/aggregator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include "ipscope/error.hpp"

namespace ipscope::aggregator {

namespace {

// Absorbs binary representation error, e.g. 0.675 * 100 = 67.49999...
constexpr double kEps = 1e-9;

FeatureKind feature_key(const std::string& s) {
  auto f = feature_from_string(s);
  if (!f) throw InvalidArgument("unknown feature: " + s);
  return *f;
}

void check_weight(double w, const std::string& what) {
  if (!std::isfinite(w) || w < 0) throw InvalidArgument(what + " must be a non-negative number");
}

template <typename T>
void put_optional(json& j, const char* key, const std::optional<T>& v) {
  j[key] = v ? json(*v) : json(nullptr);
}

template <typename T>
void get_optional(const json& j, const char* key, std::optional<T>& v) {
  if (j.contains(key) && !j[key].is_null()) {
    v = j[key].get<T>();
  } else {
    v.reset();
  }
}

}  // namespace

double WeightPolicy::weight_for(const Evidence& e) const {
  if (auto it = overrides.find(e.provider_id); it != overrides.end()) {
    if (auto w = it->second.find(e.feature); w != it->second.end()) return w->second;
  }
  return e.weight;
}

WeightPolicy WeightPolicy::from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("weight policy must be a JSON object");
  WeightPolicy p;
  p.default_weight = j.value("default_weight", 1.0);
  check_weight(p.default_weight, "default_weight");
  p.stale_dataset_factor = j.value("stale_dataset_factor", 0.5);
  if (!(p.stale_dataset_factor > 0 && p.stale_dataset_factor <= 1)) {
    throw InvalidArgument("stale_dataset_factor must be in (0, 1]");
  }
  p.tie_positive = j.value("tie_positive", true);
  const json overrides = j.value("overrides", json::object());
  for (const auto& [provider, features] : overrides.items()) {
    for (const auto& [name, w] : features.items()) {
      const double weight = w.get<double>();
      check_weight(weight, "weight for " + provider + "/" + name);
      p.overrides[provider][feature_key(name)] = weight;
    }
  }
  return p;
}

json WeightPolicy::to_json() const {
  json o = json::object();
  for (const auto& [provider, features] : overrides) {
    for (const auto& [f, w] : features) o[provider][std::string(to_string(f))] = w;
  }
  return json{{"default_weight", default_weight},
              {"stale_dataset_factor", stale_dataset_factor},
              {"tie_positive", tie_positive},
              {"overrides", o}};
}

int round_percent(double x) { return static_cast<int>(std::floor(100.0 * x + 0.5 + kEps)); }

std::optional<double> positive_share(const std::vector<Evidence>& evidence) {
  double total = 0;
  double positive = 0;
  for (const auto& e : evidence) {
    if (e.verdict == Verdict::unknown || !(e.weight > 0)) continue;
    total += e.weight;
    if (e.verdict == Verdict::positive) positive += e.weight;
  }
  if (total <= 0) return std::nullopt;
  return positive / total;
}

FeatureResult confidence_score(std::vector<Evidence> evidence, FeatureKind feature, bool tie_positive) {
  for (const auto& e : evidence) {
    if (e.feature != feature) {
      throw FeatureMismatch("evidence from " + e.provider_id + " is for " + std::string(to_string(e.feature)) +
                            ", not " + std::string(to_string(feature)));
    }
  }
  FeatureResult r;
  r.feature = feature;
  const auto p = positive_share(evidence);
  r.evidence = std::move(evidence);
  if (!p) {
    r.verdict = ResultVerdict::no_data;
    return r;
  }
  const bool tie = std::abs(*p - 0.5) <= kEps;
  const bool positive = tie ? tie_positive : *p > 0.5;
  r.verdict = positive ? ResultVerdict::positive : ResultVerdict::negative;
  r.confidence = tie ? 50 : round_percent(std::max(*p, 1.0 - *p));
  return r;
}

void to_json(json& j, const Fragment& f) {
  j = json{{"evidence", f.evidence}, {"fetched_at", format_rfc3339(f.fetched_at)}};
  put_optional(j, "geo", f.geo);
  put_optional(j, "ports", f.ports);
  put_optional(j, "whois", f.whois);
  put_optional(j, "liveness", f.liveness);
  put_optional(j, "abuse", f.abuse);
}

void from_json(const json& j, Fragment& f) {
  if (!j.is_object()) throw SerializationError("fragment must be a JSON object");
  f.evidence = j.at("evidence").get<std::vector<Evidence>>();
  auto at = parse_rfc3339(j.at("fetched_at").get<std::string>());
  if (!at) throw SerializationError("bad fragment fetched_at");
  f.fetched_at = *at;
  get_optional(j, "geo", f.geo);
  get_optional(j, "ports", f.ports);
  get_optional(j, "whois", f.whois);
  get_optional(j, "liveness", f.liveness);
  get_optional(j, "abuse", f.abuse);
  f.from_cache = false;
  f.stale = false;
}

AnalysisReport assemble_report(const Target& target, const FragmentSet& fragments, const WeightPolicy& policy,
                               Timestamp generated_at) {
  AnalysisReport report;
  report.target = target;
  report.generated_at = generated_at;
  for (const auto& [feature, frag] : fragments) {
    report.from_cache[feature] = frag.from_cache;
    report.stale[feature] = frag.stale;
    if (is_detection_feature(feature)) {
      auto evidence = frag.evidence;
      for (auto& e : evidence) e.weight = policy.weight_for(e);
      report.results[feature] = confidence_score(std::move(evidence), feature, policy.tie_positive);
    }
    if (frag.geo && !report.geo) report.geo = frag.geo;
    if (frag.ports && !report.ports) report.ports = frag.ports;
    if (frag.whois && !report.whois) report.whois = frag.whois;
    if (frag.liveness && !report.liveness) report.liveness = frag.liveness;
    if (frag.abuse && !report.abuse) report.abuse = frag.abuse;
  }
  return report;
}

json ComparisonMatrix::to_json() const {
  json cols = json::array();
  for (std::size_t c = 0; c < columns.size(); ++c) {
    cols.push_back({{"provider", columns[c].provider},
                    {"feature", to_string(columns[c].feature)},
                    {"positive_rate", column_positive_rate[c] ? json(*column_positive_rate[c]) : json(nullptr)}});
  }
  json rows_j = json::array();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    json cells_j = json::array();
    for (auto v : cells[r]) cells_j.push_back(to_string(v));
    json agree = json::object();
    for (const auto& [f, a] : agreement[r]) agree[std::string(to_string(f))] = a ? json(*a) : json(nullptr);
    rows_j.push_back({{"target", rows[r].canonical_text()}, {"cells", cells_j}, {"agreement", agree}});
  }
  return json{{"columns", cols}, {"rows", rows_j}};
}

std::string ComparisonMatrix::to_csv() const {
  std::ostringstream out;
  out << "target,provider,feature,verdict\n";
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      out << rows[r].canonical_text() << ',' << columns[c].provider << ',' << to_string(columns[c].feature) << ','
          << to_string(cells[r][c]) << '\n';
    }
  }
  return out.str();
}

std::string ComparisonMatrix::render() const {
  std::size_t width = 6;
  for (const auto& t : rows) width = std::max(width, t.canonical_text().size());
  std::ostringstream out;
  out << std::string(width, ' ');
  for (const auto& col : columns) out << "  " << col.provider << '/' << to_string(col.feature);
  out << '\n';
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& text = rows[r].canonical_text();
    out << text << std::string(width - text.size(), ' ');
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const std::size_t cw = columns[c].provider.size() + 1 + to_string(columns[c].feature).size();
      const char* glyph = cells[r][c] == Verdict::positive ? "●" : cells[r][c] == Verdict::negative ? "✗" : "?";
      out << "  " << glyph << std::string(cw - 1, ' ');
    }
    out << '\n';
  }
  return out.str();
}

ComparisonMatrix comparison_matrix(const std::vector<Target>& targets,
                                   const std::vector<reputation::ProviderClientPtr>& providers,
                                   const FeatureSet& features, const Clock& clock) {
  if (targets.empty() || providers.empty() || features.empty()) {
    throw InvalidArgument("comparison needs targets, providers and features");
  }
  ComparisonMatrix m;
  m.rows = targets;
  for (const auto& p : providers) {
    for (auto f : features) m.columns.push_back({p->config().id, f});
  }
  m.cells.assign(targets.size(), std::vector<Verdict>(m.columns.size(), Verdict::unknown));

  const std::size_t nf = features.size();
  std::vector<std::jthread> workers;
  workers.reserve(providers.size());
  for (std::size_t pi = 0; pi < providers.size(); ++pi) {
    workers.emplace_back([&, pi] {
      auto& client = *providers[pi];
      for (std::size_t r = 0; r < targets.size(); ++r) {
        if (!targets[r].is_ip()) continue;
        const auto resp = client.query(targets[r], features);
        const auto evidence = reputation::to_evidence(resp, client.config(), features, clock.now());
        std::size_t c = pi * nf;
        for (auto f : features) {
          for (const auto& e : evidence) {
            if (e.feature == f) m.cells[r][c] = e.verdict;
          }
          ++c;
        }
      }
    });
  }
  workers.clear();

  m.column_positive_rate.resize(m.columns.size());
  for (std::size_t c = 0; c < m.columns.size(); ++c) {
    int decisive = 0;
    int positive = 0;
    for (std::size_t r = 0; r < targets.size(); ++r) {
      if (m.cells[r][c] == Verdict::unknown) continue;
      ++decisive;
      if (m.cells[r][c] == Verdict::positive) ++positive;
    }
    if (decisive) m.column_positive_rate[c] = static_cast<double>(positive) / decisive;
  }

  m.agreement.resize(targets.size());
  for (std::size_t r = 0; r < targets.size(); ++r) {
    std::size_t fi = 0;
    for (auto f : features) {
      int pos = 0;
      int neg = 0;
      for (std::size_t pi = 0; pi < providers.size(); ++pi) {
        const auto v = m.cells[r][pi * nf + fi];
        if (v == Verdict::positive) ++pos;
        if (v == Verdict::negative) ++neg;
      }
      std::optional<double> a;
      if (pos + neg > 0) a = static_cast<double>(std::max(pos, neg)) / (pos + neg);
      m.agreement[r][f] = a;
      ++fi;
    }
  }
  return m;
}

}  // namespace ipscope::aggregator
