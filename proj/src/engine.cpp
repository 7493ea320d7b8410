#include "ipscope/engine.hpp"

#include <filesystem>
#include <future>

#include "ipscope/error.hpp"
#include "ipscope/liveness.hpp"
#include "ipscope/port_scan.hpp"
#include "ipscope/whois.hpp"

namespace ipscope {

namespace {

const FeatureSet& provider_features() {
  static const FeatureSet f{FeatureKind::tor, FeatureKind::vpn, FeatureKind::proxy, FeatureKind::bot,
                            FeatureKind::threat};
  return f;
}

bool is_active_probe(FeatureKind f) { return f == FeatureKind::portscan || f == FeatureKind::liveness; }

bool decisive(const std::vector<Evidence>& evidence) {
  for (const auto& e : evidence) {
    if (e.verdict != Verdict::unknown && e.weight > 0) return true;
  }
  return false;
}

bool scope_skipped(const std::vector<Evidence>& evidence) {
  return evidence.size() == 1 && evidence.front().provider_id == "scope";
}

}  // namespace

datasets::DatasetManifest load_dataset(datasets::Registry& registry, const DatasetSource& src) {
  switch (src.kind) {
    case datasets::DatasetKind::geo: return registry.load_geo_csv(src.path, src.id);
    case datasets::DatasetKind::exact_ips: return registry.load_ip_list(src.path, src.id);
    case datasets::DatasetKind::cidr_ranges: return registry.load_cidr_ranges(src.path, src.id);
  }
  throw InvalidArgument("unknown dataset kind");
}

struct Engine::Live {
  bool queried = false;
  std::vector<Evidence> provider_evidence;
  std::optional<AbuseSummary> abuse;
};

Engine::Engine(Config cfg, const Clock& clock, NetMeter* meter)
    : cfg_(std::move(cfg)),
      clock_(&clock),
      meter_(meter),
      registry_(clock),
      store_(cache::open_sqlite_store(cfg_.store_path, clock)),
      detectors_(registry_, cfg_.detectors, clock) {
  for (const auto& src : cfg_.datasets) {
    registry_.declare(src.id, src.kind, src.source_uri);
    if (src.path.empty()) continue;
    if (!std::filesystem::exists(src.path)) {
      warnings_.push_back("dataset " + src.id + ": file not found: " + src.path);
      continue;
    }
    try {
      load_dataset(registry_, src);
    } catch (const Error& e) {
      warnings_.push_back("dataset " + src.id + ": " + e.what());
    }
  }
  for (const auto& p : cfg_.providers) {
    if (p.enabled) providers_.push_back(std::make_shared<reputation::ProviderClient>(p, clock, meter));
  }
  if (cfg_.dns) {
    resolver_ = std::make_unique<dns::Client>(*cfg_.dns, meter);
  } else if (auto sys = dns::system_resolver()) {
    resolver_ = std::make_unique<dns::Client>(*sys, meter);
  }
}

std::optional<IpAddress> Engine::resolve(const Target& t, bool offline) {
  if (auto ip = t.address()) return ip;
  if (offline) return std::nullopt;
  if (resolver_) {
    const auto answer = resolver_->query_a(t.canonical_text());
    if (answer.status == dns::Status::ok && !answer.addresses.empty()) return answer.addresses.front();
    return std::nullopt;
  }
  try {
    return probes::resolve_target(t, meter_);
  } catch (const ResolveError&) {
    return std::nullopt;
  }
}

aggregator::Fragment Engine::compute(FeatureKind f, const AnalyzeRequest& req, const std::optional<IpAddress>& ip,
                                     Live& live, bool& failed) {
  aggregator::Fragment frag;
  frag.fetched_at = clock_->now();
  failed = false;

  if (f == FeatureKind::whois) {
    if (req.offline) {
      failed = true;
      return frag;
    }
    try {
      frag.whois = probes::whois_lookup(req.target, cfg_.whois, meter_);
    } catch (const probes::ReferralLoop& e) {
      frag.whois = e.partial();
    } catch (const Error&) {
      failed = true;
    }
    return frag;
  }

  if (!ip) {
    failed = true;
    return frag;
  }
  const Target ip_target = Target::from_ip(*ip);

  switch (f) {
    case FeatureKind::geolocation:
      try {
        frag.geo = registry_.lookup_geo(ip_target);
      } catch (const Error&) {
        failed = true;
      }
      return frag;

    case FeatureKind::portscan:
      if (req.offline) {
        failed = true;
        return frag;
      }
      try {
        probes::ScanOptions opts;
        opts.timeout_ms = cfg_.probes.scan_timeout_ms;
        opts.parallelism = cfg_.probes.scan_parallelism;
        opts.port_set_name = cfg_.probes.scan_port_set;
        opts.consent = req.consent;
        frag.ports = probes::scan_ports(ip_target, probes::parse_port_spec(cfg_.probes.scan_port_set), opts, *clock_,
                                        meter_);
        frag.ports->target = req.target;
      } catch (const ConsentRequired&) {
        throw;
      } catch (const Error&) {
        failed = true;
      }
      return frag;

    case FeatureKind::liveness:
      if (req.offline) {
        failed = true;
        return frag;
      }
      try {
        probes::LivenessOptions opts;
        opts.attempts = cfg_.probes.ping_attempts;
        opts.timeout_ms = cfg_.probes.ping_timeout_ms;
        opts.allow_icmp = cfg_.probes.allow_icmp;
        opts.consent = req.consent;
        frag.liveness = probes::check_liveness(ip_target, opts, meter_);
      } catch (const ConsentRequired&) {
        throw;
      } catch (const Error&) {
        failed = true;
      }
      return frag;

    case FeatureKind::blocklist: {
      if (!ip->is_v4()) return frag;  // no IPv6 blocklists; not a failure
      frag.evidence = detectors_.check_blocklists(ip_target, cfg_.dnsbl_zones, req.offline ? nullptr : resolver_.get());
      failed = !decisive(frag.evidence) && !scope_skipped(frag.evidence);
      return frag;
    }

    default: break;
  }

  const auto& pe = live.provider_evidence;
  switch (f) {
    case FeatureKind::tor: frag.evidence = detectors_.detect_tor(ip_target, pe); break;
    case FeatureKind::vpn: frag.evidence = detectors_.detect_vpn(ip_target, pe); break;
    case FeatureKind::proxy: {
      std::optional<PortScanResult> cached_scan;
      if (cfg_.detectors.open_proxy_port_weight > 0) {
        if (auto hit = store_->get_fresh({req.target.canonical_text(), FeatureKind::portscan})) {
          const auto cached = json::parse(*hit).get<aggregator::Fragment>();
          cached_scan = cached.ports;
        }
      }
      frag.evidence = detectors_.detect_proxy(ip_target, pe, req.headers, cached_scan);
      break;
    }
    case FeatureKind::bot: frag.evidence = detectors_.detect_bot(ip_target, pe); break;
    case FeatureKind::threat:
      frag.evidence = detectors_.detect_threat(ip_target, pe);
      frag.abuse = live.abuse;
      break;
    default: break;
  }
  failed = !decisive(frag.evidence) && !scope_skipped(frag.evidence);
  return frag;
}

AnalyzeOutcome Engine::analyze(const AnalyzeRequest& req) {
  auto& meter = meter_or_default(meter_);
  const bool was_offline = meter.offline();
  if (req.offline) meter.set_offline(true);
  struct Restore {
    NetMeter& m;
    bool v;
    ~Restore() { m.set_offline(v); }
  } restore{meter, was_offline};

  const FeatureSet features = req.features.empty() ? default_analyze_features() : req.features;
  const std::string key_target = req.target.canonical_text();

  // Fresh cache hits first; they never touch the network.
  aggregator::FragmentSet fragments;
  FeatureSet misses;
  for (auto f : features) {
    if (!req.force_refresh) {
      if (auto hit = store_->get_fresh({key_target, f})) {
        auto frag = json::parse(*hit).get<aggregator::Fragment>();
        frag.from_cache = true;
        fragments[f] = std::move(frag);
        continue;
      }
    }
    misses.insert(f);
  }

  std::optional<IpAddress> ip;
  bool needs_ip = false;
  for (auto f : misses) needs_ip |= f != FeatureKind::whois;
  if (needs_ip) ip = resolve(req.target, req.offline);

  for (auto f : misses) {
    if (is_active_probe(f) && ip) probes::require_consent(*ip, req.consent);
  }

  Live live;
  FeatureSet wanted;
  for (auto f : misses) {
    if (provider_features().contains(f)) wanted.insert(f);
  }
  if (!wanted.empty() && ip && !req.offline && detectors::in_scope(Target::from_ip(*ip), cfg_.detectors)) {
    const Target ip_target = Target::from_ip(*ip);
    std::vector<std::future<reputation::ProviderResponse>> pending;
    std::vector<reputation::ProviderClientPtr> asked;
    for (const auto& p : providers_) {
      FeatureSet mine;
      for (auto f : wanted) {
        if (p->config().supported_features().contains(f)) mine.insert(f);
      }
      const bool abuse = wanted.contains(FeatureKind::threat) && p->config().abuse.has_value();
      if (mine.empty() && !abuse) continue;
      asked.push_back(p);
      pending.push_back(std::async(std::launch::async, [p, ip_target, mine] { return p->query(ip_target, mine); }));
    }
    for (std::size_t i = 0; i < pending.size(); ++i) {
      const auto resp = pending[i].get();
      const auto& pc = asked[i]->config();
      auto ev = reputation::to_evidence(resp, pc, wanted, clock_->now(), cfg_.detectors.threat_threshold);
      live.provider_evidence.insert(live.provider_evidence.end(), ev.begin(), ev.end());
      if (!live.abuse && pc.abuse && resp.outcome == reputation::Outcome::ok) {
        try {
          live.abuse = reputation::normalize_abuse(resp.body, pc, clock_->now());
        } catch (const Error&) {
        }
      }
    }
    live.queried = true;
  }

  AnalyzeOutcome out;
  for (auto f : misses) {
    bool failed = false;
    auto frag = compute(f, req, ip, live, failed);
    if (failed && req.allow_stale) {
      if (auto stale = store_->get_stale_fallback({key_target, f}, cfg_.ttl.max_stale_s)) {
        frag = json::parse(stale->fragment).get<aggregator::Fragment>();
        frag.from_cache = true;
        frag.stale = true;
        failed = false;
      }
    }
    if (failed) {
      out.failed.insert(f);
    } else if (!frag.from_cache) {
      store_->put({key_target, f}, json(frag).dump(), cfg_.ttl.ttl_for(f), frag.fetched_at);
    }
    fragments[f] = std::move(frag);
  }

  out.report = aggregator::assemble_report(req.target, fragments, cfg_.weights, clock_->now());
  out.total_failure = !features.empty() && out.failed.size() == features.size();

  cache::QueryLogEntry entry;
  entry.target = key_target;
  entry.features = features;
  entry.user_id = req.user_id;
  entry.at = clock_->now();
  for (const auto& [f, frag] : fragments) entry.cache_hits[f] = frag.from_cache;
  store_->log_query(std::move(entry));
  return out;
}

}  // namespace ipscope
