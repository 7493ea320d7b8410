#include "ipscope/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ipscope/error.hpp"

namespace ipscope {

namespace fs = std::filesystem;

namespace {

std::string resolve_path(const std::string& base, const std::string& p) {
  if (p.empty() || p == ":memory:" || p.find("://") != std::string::npos) return p;
  const fs::path path(p);
  return path.is_absolute() ? p : (fs::path(base) / path).lexically_normal().string();
}

datasets::DatasetKind default_kind(const std::string& id) {
  if (id == datasets::kGeo) return datasets::DatasetKind::geo;
  if (id == datasets::kTorExits) return datasets::DatasetKind::exact_ips;
  return datasets::DatasetKind::cidr_ranges;
}

}  // namespace

Config config_from_json(const json& j, const std::string& base_dir) {
  if (!j.is_object()) throw InvalidArgument("config must be a JSON object");
  Config c;
  c.base_dir = base_dir;
  try {
    c.listen = j.value("listen", c.listen);
    c.store_path = resolve_path(base_dir, j.value("store_path", c.store_path));
    c.users_path = resolve_path(base_dir, j.value("users_path", std::string()));
    if (c.users_path.empty()) c.users_path = c.store_path;

    for (const auto& d : j.value("datasets", json::array())) {
      DatasetSource s;
      s.id = d.at("id").get<std::string>();
      s.kind = default_kind(s.id);
      if (d.contains("kind")) {
        auto k = datasets::dataset_kind_from_string(d["kind"].get<std::string>());
        if (!k) throw InvalidArgument("unknown dataset kind for " + s.id);
        s.kind = *k;
      }
      s.path = resolve_path(base_dir, d.value("path", std::string()));
      s.source_uri = resolve_path(base_dir, d.value("source_uri", std::string()));
      if (s.source_uri.empty()) s.source_uri = s.path;
      c.datasets.push_back(std::move(s));
    }

    if (j.contains("providers")) c.providers = reputation::providers_from_json(j["providers"]);
    if (j.contains("dnsbl_zones")) c.dnsbl_zones = detectors::zones_from_json(j["dnsbl_zones"]);

    if (j.contains("dns") && !j["dns"].is_null()) {
      const auto& d = j["dns"];
      dns::ResolverConfig r;
      const auto server = d.value("server", std::string("127.0.0.1"));
      auto ip = IpAddress::parse(server);
      if (!ip) throw InvalidArgument("dns.server must be an IP address");
      r.server = *ip;
      r.port = d.value("port", static_cast<std::uint16_t>(53));
      r.timeout = std::chrono::milliseconds(d.value("timeout_ms", 2000));
      c.dns = r;
    }

    if (j.contains("whois")) {
      const auto& w = j["whois"];
      c.whois.root_server = w.value("root_server", c.whois.root_server);
      c.whois.max_hops = w.value("max_hops", c.whois.max_hops);
      c.whois.timeout = std::chrono::milliseconds(w.value("timeout_ms", static_cast<int>(c.whois.timeout.count())));
      const json overrides = w.value("server_overrides", json::object());
      for (const auto& [name, ep] : overrides.items()) {
        c.whois.server_overrides[name] = ep.get<std::string>();
      }
    }

    if (j.contains("weights")) c.weights = aggregator::WeightPolicy::from_json(j["weights"]);
    if (j.contains("ttl")) c.ttl = cache::TtlPolicy::from_json(j["ttl"]);

    if (j.contains("detectors")) {
      const auto& d = j["detectors"];
      auto& dc = c.detectors;
      dc.allow_private = d.value("allow_private", dc.allow_private);
      dc.threat_threshold = d.value("threat_threshold", dc.threat_threshold);
      dc.open_proxy_port_weight = d.value("open_proxy_port_weight", dc.open_proxy_port_weight);
      dc.header_weight = d.value("header_weight", dc.header_weight);
      dc.dataset_max_age = std::chrono::seconds(
          d.value("dataset_max_age_s", static_cast<std::int64_t>(dc.dataset_max_age.count())));
      dc.dnsbl_parallelism = d.value("dnsbl_parallelism", dc.dnsbl_parallelism);
      if (d.contains("header_watch")) dc.header_watch = d["header_watch"].get<std::vector<std::string>>();
    }
    c.detectors.dataset_weight = c.weights.default_weight;
    c.detectors.stale_dataset_factor = c.weights.stale_dataset_factor;
    if (c.detectors.threat_threshold < 0 || c.detectors.threat_threshold > 100) {
      throw InvalidArgument("threat_threshold must be in 0..100");
    }

    if (j.contains("probes")) {
      const auto& p = j["probes"];
      auto& pd = c.probes;
      pd.scan_timeout_ms = p.value("scan_timeout_ms", pd.scan_timeout_ms);
      pd.scan_parallelism = p.value("scan_parallelism", pd.scan_parallelism);
      pd.scan_port_set = p.value("scan_port_set", pd.scan_port_set);
      pd.ping_attempts = p.value("ping_attempts", pd.ping_attempts);
      pd.ping_timeout_ms = p.value("ping_timeout_ms", pd.ping_timeout_ms);
      pd.allow_icmp = p.value("allow_icmp", pd.allow_icmp);
    }

    c.session_ttl = std::chrono::seconds(j.value("session_ttl_s", static_cast<std::int64_t>(3600)));
    c.console_dir = resolve_path(base_dir, j.value("console_dir", std::string()));
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("bad config: ") + e.what());
  }
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto doc = json::parse(ss.str(), nullptr, false);
  if (doc.is_discarded()) throw InvalidArgument("config " + path + " is not valid JSON");
  const auto base = fs::absolute(fs::path(path)).parent_path().string();
  return config_from_json(doc, base);
}

std::optional<std::string> resolve_config_path(const std::optional<std::string>& explicit_path) {
  if (explicit_path && !explicit_path->empty()) return explicit_path;
  if (const char* env = std::getenv("IPSCOPE_CONFIG"); env && *env) return std::string(env);
  return std::nullopt;
}

}  // namespace ipscope
