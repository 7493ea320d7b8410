#include "ipscope/reputation.hpp"

#include <cmath>
#include <cstdlib>
#include <set>

#include <httplib.h>

#include "ipscope/socket.hpp"

namespace ipscope::reputation {

using namespace std::chrono;

namespace {

const json* find_pointer(const json& body, const std::string& pointer) {
  if (pointer.empty()) return nullptr;
  try {
    const json::json_pointer ptr(pointer);
    if (!body.contains(ptr)) return nullptr;
    return &body.at(ptr);
  } catch (const json::exception&) {
    return nullptr;
  }
}

std::optional<int> read_score(const json& v) {
  if (v.is_number_integer()) return v.get<int>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d) return static_cast<int>(d);
  }
  return std::nullopt;
}

// Checks every score the adapter reads. Out-of-range values are a contract
// violation and are never clamped.
std::optional<std::string> validate_scores(const json& body, const ProviderConfig& cfg) {
  auto check = [&](const std::string& pointer) -> std::optional<std::string> {
    const json* v = find_pointer(body, pointer);
    if (!v || v->is_null()) return std::nullopt;
    auto s = read_score(*v);
    if (!s || *s < 0 || *s > 100) return "score at " + pointer + " is outside 0..100: " + v->dump();
    return std::nullopt;
  };
  for (const auto& [feature, rule] : cfg.field_map) {
    if (rule.kind != FieldKind::score) continue;
    if (auto err = check(rule.pointer)) return err;
  }
  if (cfg.abuse) return check(cfg.abuse->score);
  return std::nullopt;
}

FieldKind field_kind_from_string(const std::string& s) {
  if (s == "flag" || s == "bool") return FieldKind::flag;
  if (s == "score") return FieldKind::score;
  throw InvalidArgument("unknown field kind '" + s + "'");
}

std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw InvalidArgument("base_url needs a scheme: " + url);
  const auto path = url.find('/', scheme + 3);
  if (path == std::string::npos) return {url, ""};
  std::string prefix = url.substr(path);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, path), prefix};
}

}  // namespace

FeatureSet ProviderConfig::supported_features() const {
  FeatureSet out;
  for (const auto& [f, rule] : field_map) out.insert(f);
  return out;
}

double ProviderConfig::weight_for(FeatureKind f) const {
  auto it = feature_weights.find(f);
  return it == feature_weights.end() ? 1.0 : it->second;
}

ProviderConfig provider_from_json(const json& j) {
  ProviderConfig cfg;
  cfg.id = j.value("id", "");
  if (cfg.id.empty()) throw InvalidArgument("provider needs an id");
  cfg.base_url = j.value("base_url", "");
  if (cfg.base_url.empty()) throw InvalidArgument("provider '" + cfg.id + "' needs a base_url");
  cfg.api_key_env = j.value("api_key_env", "");
  cfg.api_key_header = j.value("api_key_header", "Key");
  if (j.contains("endpoints")) {
    const auto& e = j["endpoints"];
    cfg.endpoints.check = e.value("check", cfg.endpoints.check);
    cfg.endpoints.reports = e.value("reports", "");
  }
  cfg.ip_param = j.value("ip_param", cfg.ip_param);
  cfg.window_param = j.value("window_param", cfg.window_param);
  const json field_map = j.value("field_map", json::object());
  for (const auto& [name, rule] : field_map.items()) {
    auto f = feature_from_string(name);
    if (!f || !is_detection_feature(*f)) throw InvalidArgument("field_map key '" + name + "' is not a detection feature");
    FieldRule r;
    if (rule.is_string()) {
      r.pointer = rule.get<std::string>();
    } else {
      r.pointer = rule.value("path", "");
      r.kind = field_kind_from_string(rule.value("type", "flag"));
    }
    if (r.pointer.empty() || r.pointer.front() != '/') {
      throw InvalidArgument("field_map path for '" + name + "' must be a JSON pointer");
    }
    cfg.field_map[*f] = r;
  }
  if (j.contains("abuse") && !j["abuse"].is_null()) {
    AbuseFieldMap a;
    const auto& m = j["abuse"];
    a.score = m.value("score", a.score);
    a.total_reports = m.value("total_reports", a.total_reports);
    a.reports = m.value("reports", a.reports);
    a.is_tor = m.value("is_tor", a.is_tor);
    a.isp = m.value("isp", a.isp);
    a.report_time = m.value("report_time", a.report_time);
    a.report_categories = m.value("report_categories", a.report_categories);
    a.report_comment = m.value("report_comment", a.report_comment);
    a.report_place = m.value("report_place", a.report_place);
    cfg.abuse = a;
  }
  const json feature_weights = j.value("feature_weights", json::object());
  for (const auto& [name, w] : feature_weights.items()) {
    auto f = feature_from_string(name);
    if (!f) throw InvalidArgument("feature_weights key '" + name + "' is not a feature");
    const double weight = w.get<double>();
    if (!(weight >= 0)) throw InvalidArgument("feature weight must be non-negative");
    cfg.feature_weights[*f] = weight;
  }
  cfg.timeout_ms = j.value("timeout_ms", cfg.timeout_ms);
  if (cfg.timeout_ms < 100 || cfg.timeout_ms > 30000) {
    throw InvalidArgument("provider '" + cfg.id + "' timeout_ms must be within 100..30000");
  }
  cfg.max_age_days = j.value("max_age_days", cfg.max_age_days);
  if (cfg.max_age_days < 1) throw InvalidArgument("max_age_days must be positive");
  cfg.cooldown_s = j.value("cooldown_s", cfg.cooldown_s);
  cfg.enabled = j.value("enabled", true);
  split_url(cfg.base_url);
  return cfg;
}

json provider_to_json(const ProviderConfig& cfg) {
  json fm = json::object();
  for (const auto& [f, r] : cfg.field_map) {
    fm[std::string(to_string(f))] = {{"path", r.pointer}, {"type", r.kind == FieldKind::score ? "score" : "flag"}};
  }
  json weights = json::object();
  for (const auto& [f, w] : cfg.feature_weights) weights[std::string(to_string(f))] = w;
  json j{{"id", cfg.id},
         {"base_url", cfg.base_url},
         {"api_key_env", cfg.api_key_env},
         {"api_key_header", cfg.api_key_header},
         {"endpoints", {{"check", cfg.endpoints.check}, {"reports", cfg.endpoints.reports}}},
         {"ip_param", cfg.ip_param},
         {"window_param", cfg.window_param},
         {"field_map", fm},
         {"feature_weights", weights},
         {"timeout_ms", cfg.timeout_ms},
         {"max_age_days", cfg.max_age_days},
         {"cooldown_s", cfg.cooldown_s},
         {"enabled", cfg.enabled}};
  if (cfg.abuse) {
    const auto& a = *cfg.abuse;
    j["abuse"] = {{"score", a.score},
                  {"total_reports", a.total_reports},
                  {"reports", a.reports},
                  {"is_tor", a.is_tor},
                  {"isp", a.isp},
                  {"report_time", a.report_time},
                  {"report_categories", a.report_categories},
                  {"report_comment", a.report_comment},
                  {"report_place", a.report_place}};
  }
  return j;
}

std::vector<ProviderConfig> providers_from_json(const json& j) {
  if (!j.is_array()) throw InvalidArgument("providers must be a JSON array");
  std::vector<ProviderConfig> out;
  std::set<std::string> ids;
  for (const auto& item : j) {
    out.push_back(provider_from_json(item));
    if (!ids.insert(out.back().id).second) throw InvalidArgument("duplicate provider id '" + out.back().id + "'");
  }
  return out;
}

std::string_view to_string(Outcome o) noexcept {
  switch (o) {
    case Outcome::ok: return "ok";
    case Outcome::timeout: return "timeout";
    case Outcome::http_error: return "http_error";
    case Outcome::parse_error: return "parse_error";
  }
  return "http_error";
}

ProviderUnavailable::ProviderUnavailable(ProviderResponse resp)
    : Error(ErrorCode::provider_unavailable,
            "provider '" + resp.provider_id + "' unavailable: " + std::string(to_string(resp.outcome)) +
                (resp.detail.empty() ? "" : " (" + resp.detail + ")")),
      response_(std::move(resp)) {}

ProviderClient::ProviderClient(ProviderConfig cfg, const Clock& clock, NetMeter* meter)
    : cfg_(std::move(cfg)), clock_(&clock), meter_(meter) {}

bool ProviderClient::cooling_down() const {
  std::lock_guard lock(mu_);
  return clock_->now() < cooldown_until_;
}

ProviderResponse ProviderClient::query(const Target& ip, const FeatureSet&) {
  return get(cfg_.endpoints.check, ip);
}

ProviderResponse ProviderClient::get(const std::string& endpoint, const Target& ip) {
  std::lock_guard lock(mu_);
  ProviderResponse resp;
  resp.provider_id = cfg_.id;

  if (clock_->now() < cooldown_until_) {
    resp.outcome = Outcome::http_error;
    resp.http_status = 429;
    resp.detail = "rate-limit cooldown";
    return resp;
  }

  httplib::Headers headers{{"Accept", "application/json"}};
  if (!cfg_.api_key_env.empty()) {
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (!key || !*key) {
      resp.outcome = Outcome::http_error;
      resp.detail = "API key variable " + cfg_.api_key_env + " is not set";
      return resp;
    }
    headers.emplace(cfg_.api_key_header, key);
  }

  const auto [base, prefix] = split_url(cfg_.base_url);
  const httplib::Params params{{cfg_.ip_param, ip.canonical_text()},
                               {cfg_.window_param, std::to_string(cfg_.max_age_days)}};
  const auto path = httplib::append_query_params(prefix + endpoint, params);

  const auto start = steady_clock::now();
  const auto budget = milliseconds(2 * cfg_.timeout_ms);
  httplib::Result res{nullptr, httplib::Error::Unknown};
  for (int attempt = 0; attempt < 2; ++attempt) {
    auto per_phase = milliseconds(cfg_.timeout_ms);
    if (attempt == 1) {
      const auto left = duration_cast<milliseconds>(budget - (steady_clock::now() - start));
      per_phase = std::max(left / 2, milliseconds(1));
    }
    meter_or_default(meter_).begin(Channel::http);
    httplib::Client client(base);
    client.set_connection_timeout(per_phase);
    client.set_read_timeout(per_phase);
    client.set_write_timeout(per_phase);
    res = client.Get(path, headers);
    // Only a refused or reset connection earns the retry; anything that
    // already spent its timeout does not.
    if (res || res.error() != httplib::Error::Connection) break;
    if (steady_clock::now() - start >= milliseconds(cfg_.timeout_ms)) break;
  }
  resp.elapsed_ms = duration_cast<milliseconds>(steady_clock::now() - start).count();

  if (!res) {
    const auto err = res.error();
    resp.detail = httplib::to_string(err);
    resp.outcome = (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
                    resp.elapsed_ms >= cfg_.timeout_ms)
                       ? Outcome::timeout
                       : Outcome::http_error;
    return resp;
  }

  resp.http_status = res->status;
  if (res->status == 429) {
    cooldown_until_ = clock_->now() + seconds(cfg_.cooldown_s);
    resp.outcome = Outcome::http_error;
    resp.detail = "rate limited";
    return resp;
  }
  if (res->status < 200 || res->status >= 300) {
    resp.outcome = Outcome::http_error;
    return resp;
  }
  try {
    resp.body = json::parse(res->body);
  } catch (const json::parse_error& e) {
    resp.outcome = Outcome::parse_error;
    resp.detail = e.what();
    return resp;
  }
  if (auto err = validate_scores(resp.body, cfg_)) {
    resp.outcome = Outcome::parse_error;
    resp.detail = *err;
    return resp;
  }
  resp.outcome = Outcome::ok;
  return resp;
}

AbuseSummary ProviderClient::fetch_abuse_summary(const Target& ip) {
  if (!cfg_.abuse) {
    ProviderResponse r;
    r.provider_id = cfg_.id;
    r.detail = "provider has no abuse mapping";
    throw ProviderUnavailable(std::move(r));
  }
  auto resp = get(cfg_.endpoints.reports.empty() ? cfg_.endpoints.check : cfg_.endpoints.reports, ip);
  if (resp.outcome != Outcome::ok) throw ProviderUnavailable(std::move(resp));
  try {
    return normalize_abuse(resp.body, cfg_, clock_->now());
  } catch (const SerializationError& e) {
    resp.outcome = Outcome::parse_error;
    resp.detail = e.what();
    throw ProviderUnavailable(std::move(resp));
  }
}

std::vector<Evidence> to_evidence(const ProviderResponse& resp, const ProviderConfig& cfg, const FeatureSet& features,
                                  Timestamp fetched_at, int threat_threshold) {
  std::vector<Evidence> out;
  for (const auto feature : features) {
    auto rule = cfg.field_map.find(feature);
    if (rule == cfg.field_map.end()) continue;

    Evidence e;
    e.provider_id = cfg.id;
    e.feature = feature;
    e.weight = cfg.weight_for(feature);
    e.fetched_at = fetched_at;
    e.latency_ms = resp.elapsed_ms;
    e.verdict = Verdict::unknown;
    e.raw = json{{"outcome", to_string(resp.outcome)}, {"field", rule->second.pointer}};
    if (resp.http_status) e.raw["http_status"] = resp.http_status;

    if (resp.outcome == Outcome::ok) {
      const json* v = find_pointer(resp.body, rule->second.pointer);
      if (v && !v->is_null()) {
        e.raw["value"] = *v;
        if (rule->second.kind == FieldKind::flag && v->is_boolean()) {
          e.verdict = v->get<bool>() ? Verdict::positive : Verdict::negative;
        } else if (rule->second.kind == FieldKind::score) {
          if (auto s = read_score(*v); s && *s >= 0 && *s <= 100) {
            e.verdict = *s >= threat_threshold ? Verdict::positive : Verdict::negative;
            e.raw["score"] = *s;
            e.raw["threshold"] = threat_threshold;
          }
        }
      } else {
        e.raw["missing"] = true;
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

AbuseSummary normalize_abuse(const json& body, const ProviderConfig& cfg, Timestamp now) {
  const AbuseFieldMap map = cfg.abuse.value_or(AbuseFieldMap{});
  AbuseSummary out;
  out.provider_id = cfg.id;
  out.window_days = cfg.max_age_days;

  const json* score = find_pointer(body, map.score);
  if (!score) throw SerializationError("abuse body has no score at " + map.score);
  auto s = read_score(*score);
  if (!s || *s < 0 || *s > 100) throw SerializationError("abuse score outside 0..100: " + score->dump());
  out.score = *s;

  const json* total = find_pointer(body, map.total_reports);
  const bool has_total = total && total->is_number_integer();
  if (has_total) out.total_reports = std::max(0, total->get<int>());
  if (const json* tor = find_pointer(body, map.is_tor); tor && tor->is_boolean()) out.is_tor = tor->get<bool>();
  if (const json* isp = find_pointer(body, map.isp); isp && isp->is_string()) out.isp = isp->get<std::string>();

  const auto window_start = now - days(out.window_days);
  if (const json* reports = find_pointer(body, map.reports); reports && reports->is_array()) {
    for (const auto& item : *reports) {
      if (!item.is_object()) continue;
      AbuseReport rep;
      auto t = item.contains(map.report_time) && item[map.report_time].is_string()
                   ? parse_rfc3339(item[map.report_time].get<std::string>())
                   : std::nullopt;
      if (!t || *t < window_start) {
        ++out.excluded_reports;
        continue;
      }
      rep.reported_at = *t;
      if (item.contains(map.report_categories) && item[map.report_categories].is_array()) {
        for (const auto& c : item[map.report_categories]) {
          if (c.is_number_integer()) rep.categories.push_back(c.get<int>());
        }
      }
      if (item.contains(map.report_comment) && item[map.report_comment].is_string()) {
        rep.comment = item[map.report_comment].get<std::string>();
      }
      if (item.contains(map.report_place) && item[map.report_place].is_string()) {
        rep.place = item[map.report_place].get<std::string>();
      }
      for (int c : rep.categories) ++out.categories[c];
      out.reports.push_back(std::move(rep));
    }
  }
  if (!has_total) out.total_reports = static_cast<int>(out.reports.size());
  return out;
}

}  // namespace ipscope::reputation
