#include "ipscope/detectors.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <thread>

#include "ipscope/error.hpp"

namespace ipscope::detectors {

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) == std::tolower(static_cast<unsigned char>(y));
         });
}

const IpPrefix& loopback_block() {
  static const IpPrefix p = *IpPrefix::parse("127.0.0.0/8");
  return p;
}

Evidence make_unknown(std::string provider, FeatureKind feature, double weight, Timestamp at, json raw) {
  Evidence e;
  e.provider_id = std::move(provider);
  e.feature = feature;
  e.verdict = Verdict::unknown;
  e.weight = weight;
  e.fetched_at = at;
  e.raw = std::move(raw);
  return e;
}

}  // namespace

std::vector<DnsblZone> zones_from_json(const json& j) {
  if (!j.is_array()) throw InvalidArgument("DNSBL zones must be a JSON array");
  std::vector<DnsblZone> out;
  for (const auto& item : j) {
    DnsblZone z;
    const std::string zone = item.value("zone", "");
    try {
      const auto t = parse_target(zone);
      if (t.kind() != TargetKind::domain) throw ParseError("zone is an address");
      z.zone = t.canonical_text();
    } catch (const ParseError& e) {
      throw InvalidArgument("bad DNSBL zone '" + zone + "': " + e.what());
    }
    for (const auto& code : item.value("listed_codes", json::array())) {
      auto ip = IpAddress::parse(code.get<std::string>());
      if (!ip || !loopback_block().contains(*ip)) {
        throw InvalidArgument("DNSBL listed code must be inside 127.0.0.0/8: " + code.dump());
      }
      z.listed_codes.push_back(*ip);
    }
    z.weight = item.value("weight", 1.0);
    if (!(z.weight >= 0)) throw InvalidArgument("DNSBL zone weight must be non-negative");
    out.push_back(std::move(z));
  }
  return out;
}

const std::vector<std::string>& default_header_watch() {
  static const std::vector<std::string> watch{"Via", "X-Forwarded-For", "Forwarded", "Proxy-Connection",
                                              "X-Proxy-Id"};
  return watch;
}

const std::vector<std::uint16_t>& default_proxy_ports() {
  static const std::vector<std::uint16_t> ports{1080, 3128, 8080, 8888};
  return ports;
}

HeaderFindings scan_headers(const HeaderMap& headers, const std::vector<std::string>& watch) {
  HeaderFindings out;
  for (const auto& [name, value] : headers) {
    for (const auto& w : watch) {
      if (iequals(name, w)) {
        out.suspicious_headers.emplace_back(w, value);
        break;
      }
    }
  }
  out.verdict_contribution = out.suspicious_headers.empty() ? Verdict::negative : Verdict::positive;
  return out;
}

bool in_scope(const Target& ip, const DetectorConfig& cfg) {
  if (!ip.is_ip()) return false;
  if (cfg.allow_private) return true;
  const auto scope = classify_scope(ip);
  return scope != AddressScope::private_use && scope != AddressScope::loopback;
}

std::vector<Evidence> select_feature(const ProviderEvidence& providers, FeatureKind feature) {
  std::vector<Evidence> out;
  for (const auto& e : providers) {
    if (e.feature == feature) out.push_back(e);
  }
  return out;
}

Detectors::Detectors(const datasets::Registry& registry, DetectorConfig cfg, const Clock& clock)
    : registry_(&registry), cfg_(std::move(cfg)), clock_(&clock) {}

std::vector<Evidence> Detectors::scope_guard(const Target& ip, FeatureKind feature) const {
  if (!ip.is_ip()) throw UnsupportedTarget("detectors need an IP address");
  if (in_scope(ip, cfg_)) return {};
  return {make_unknown("scope", feature, 0.0, clock_->now(),
                       json{{"skipped", "non-public address"}, {"scope", to_string(classify_scope(ip))}})};
}

Evidence Detectors::dataset_evidence(const std::string& id, FeatureKind feature, const Target& ip) const {
  const std::string provider = "dataset:" + id;
  const auto now = clock_->now();
  datasets::DatasetPtr ds;
  try {
    ds = registry_->get(id);
  } catch (const UnknownDataset&) {
  }
  if (!ds) return make_unknown(provider, feature, cfg_.dataset_weight, now, json{{"dataset", id}, {"error", "not loaded"}});

  const bool stale = now - ds->manifest.loaded_at > cfg_.dataset_max_age;
  Evidence e;
  e.provider_id = provider;
  e.feature = feature;
  e.fetched_at = now;
  e.weight = cfg_.dataset_weight * (stale ? cfg_.stale_dataset_factor : 1.0);
  const auto m = registry_->contains(id, ip);
  e.verdict = m.member ? Verdict::positive : Verdict::negative;
  e.raw = json{{"dataset", id}, {"loaded_at", format_rfc3339(ds->manifest.loaded_at)}, {"stale", stale}};
  if (m.member) {
    e.raw["matched"] = m.matched;
    if (!m.label.empty()) e.raw["label"] = m.label;
  }
  return e;
}

std::vector<Evidence> Detectors::detect_tor(const Target& ip, const ProviderEvidence& providers) const {
  if (auto skip = scope_guard(ip, FeatureKind::tor); !skip.empty()) return skip;
  std::vector<Evidence> out{dataset_evidence(datasets::kTorExits, FeatureKind::tor, ip)};
  for (auto& e : select_feature(providers, FeatureKind::tor)) out.push_back(std::move(e));
  return out;
}

std::vector<Evidence> Detectors::detect_vpn(const Target& ip, const ProviderEvidence& providers) const {
  if (auto skip = scope_guard(ip, FeatureKind::vpn); !skip.empty()) return skip;
  std::vector<Evidence> out{dataset_evidence(datasets::kVpnRanges, FeatureKind::vpn, ip)};
  for (auto& e : select_feature(providers, FeatureKind::vpn)) out.push_back(std::move(e));
  return out;
}

std::vector<Evidence> Detectors::detect_proxy(const Target& ip, const ProviderEvidence& providers,
                                              const std::optional<HeaderMap>& headers,
                                              const std::optional<PortScanResult>& cached_scan) const {
  if (auto skip = scope_guard(ip, FeatureKind::proxy); !skip.empty()) return skip;
  const auto now = clock_->now();
  std::vector<Evidence> out{dataset_evidence(datasets::kDatacenterRanges, FeatureKind::proxy, ip)};

  if (headers) {
    const auto findings = scan_headers(*headers, cfg_.header_watch);
    Evidence e;
    e.provider_id = "headers";
    e.feature = FeatureKind::proxy;
    e.verdict = findings.verdict_contribution;
    e.weight = cfg_.header_weight;
    e.fetched_at = now;
    json listed = json::array();
    for (const auto& [name, value] : findings.suspicious_headers) listed.push_back({{"name", name}, {"value", value}});
    e.raw = json{{"suspicious_headers", listed}};
    out.push_back(std::move(e));
  }

  if (cfg_.open_proxy_port_weight > 0 && cached_scan) {
    const auto& ports = default_proxy_ports();
    json open = json::array();
    std::size_t covered = 0;
    for (const auto& entry : cached_scan->entries) {
      if (std::find(ports.begin(), ports.end(), entry.port) == ports.end()) continue;
      ++covered;
      if (entry.state == PortState::open) open.push_back(entry.port);
    }
    // A scan that skipped some proxy ports can only ever say "positive".
    if (!open.empty() || covered == ports.size()) {
      Evidence e;
      e.provider_id = "portscan:cache";
      e.feature = FeatureKind::proxy;
      e.verdict = open.empty() ? Verdict::negative : Verdict::positive;
      e.weight = cfg_.open_proxy_port_weight;
      e.fetched_at = now;
      e.raw = json{{"open_proxy_ports", open}, {"scanned_at", format_rfc3339(cached_scan->finished_at)}};
      out.push_back(std::move(e));
    }
  }

  for (auto& e : select_feature(providers, FeatureKind::proxy)) out.push_back(std::move(e));
  return out;
}

std::vector<Evidence> Detectors::detect_bot(const Target& ip, const ProviderEvidence& providers) const {
  if (auto skip = scope_guard(ip, FeatureKind::bot); !skip.empty()) return skip;
  return select_feature(providers, FeatureKind::bot);
}

std::vector<Evidence> Detectors::detect_threat(const Target& ip, const ProviderEvidence& providers,
                                               std::optional<int> threshold) const {
  if (auto skip = scope_guard(ip, FeatureKind::threat); !skip.empty()) return skip;
  const int cut = threshold.value_or(cfg_.threat_threshold);
  auto out = select_feature(providers, FeatureKind::threat);
  for (auto& e : out) {
    if (e.raw.contains("score") && e.raw["score"].is_number_integer()) {
      const int score = e.raw["score"].get<int>();
      e.verdict = score >= cut ? Verdict::positive : Verdict::negative;
      e.raw["threshold"] = cut;
    }
  }
  return out;
}

std::vector<Evidence> Detectors::check_blocklists(const Target& ip, const std::vector<DnsblZone>& zones,
                                                  const dns::Client* resolver) const {
  if (auto skip = scope_guard(ip, FeatureKind::blocklist); !skip.empty()) return skip;
  if (ip.kind() != TargetKind::ipv4) return {};
  const auto addr = *ip.address();

  std::vector<Evidence> out(zones.size());
  if (!resolver) {
    const auto now = clock_->now();
    for (std::size_t i = 0; i < zones.size(); ++i) {
      out[i] = make_unknown("dnsbl:" + zones[i].zone, FeatureKind::blocklist, zones[i].weight, now,
                            json{{"zone", zones[i].zone}, {"error", "resolver unavailable"}});
    }
    return out;
  }

  auto run_one = [&](std::size_t i) {
    const auto& zone = zones[i];
    const std::string qname = dns::dnsbl_query_name(addr, zone.zone);
    const auto start = std::chrono::steady_clock::now();
    dns::Answer answer;
    try {
      answer = resolver->query_a(qname);
    } catch (const Error& err) {
      answer.status = dns::Status::error;
    }
    Evidence e;
    e.provider_id = "dnsbl:" + zone.zone;
    e.feature = FeatureKind::blocklist;
    e.weight = zone.weight;
    e.fetched_at = clock_->now();
    e.latency_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
    e.raw = json{{"zone", zone.zone}, {"query", qname}, {"status", dns::to_string(answer.status)}};
    e.verdict = Verdict::unknown;
    if (answer.status == dns::Status::nxdomain) {
      e.verdict = Verdict::negative;
    } else if (answer.status == dns::Status::ok) {
      json codes = json::array();
      bool listed = false;
      bool foreign = false;
      for (const auto& a : answer.addresses) {
        codes.push_back(a.to_string());
        const bool hit = zone.listed_codes.empty()
                             ? loopback_block().contains(a)
                             : std::find(zone.listed_codes.begin(), zone.listed_codes.end(), a) != zone.listed_codes.end();
        if (hit) {
          listed = true;
        } else {
          foreign = true;
        }
      }
      e.raw["answers"] = codes;
      if (listed) {
        e.verdict = Verdict::positive;
      } else if (answer.addresses.empty()) {
        e.verdict = Verdict::negative;
      } else if (foreign) {
        // Non-listing return codes usually signal a refused or wildcarded
        // query, not a clean bill.
        e.verdict = Verdict::unknown;
      }
    }
    out[i] = std::move(e);
  };

  const std::size_t workers =
      std::min<std::size_t>(zones.size(), static_cast<std::size_t>(std::max(1, cfg_.dnsbl_parallelism)));
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < zones.size(); i = next++) run_one(i);
    });
  }
  pool.clear();
  return out;
}

}  // namespace ipscope::detectors
