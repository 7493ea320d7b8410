#include "ipscope/whois.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "ipscope/socket.hpp"

namespace ipscope::probes {

using namespace std::chrono;

ReferralLoop::ReferralLoop(const std::string& what, WhoisRecord partial)
    : Error(ErrorCode::referral_loop, what), partial_(std::move(partial)) {}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Calls fn(key_lowercase, value) for every `key: value` line.
template <typename Fn>
void for_each_field(std::string_view text, Fn&& fn) {
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    const auto line = text.substr(pos, eol - pos);
    pos = eol + 1;
    const auto stripped = trim(line);
    if (stripped.empty() || stripped.front() == '%' || stripped.front() == '#') continue;
    const auto colon = stripped.find(':');
    if (colon == std::string_view::npos) continue;
    const auto value = trim(stripped.substr(colon + 1));
    if (value.empty()) continue;
    fn(lower(trim(stripped.substr(0, colon))), value);
  }
}

std::optional<std::string> server_name(std::string_view value) {
  std::string v = lower(trim(value));
  if (v.rfind("rwhois://", 0) == 0) return std::nullopt;
  if (v.rfind("whois://", 0) == 0) v.erase(0, 8);
  if (auto slash = v.find('/'); slash != std::string::npos) v.erase(slash);
  while (!v.empty() && v.back() == '.') v.pop_back();
  if (v.empty() || v.find(' ') != std::string::npos) return std::nullopt;
  return v;
}

std::optional<Timestamp> parse_date(std::string_view value) {
  if (auto t = parse_rfc3339(value)) return t;
  return parse_iso_date(value);
}

bool is_one_of(const std::string& key, std::initializer_list<std::string_view> names) {
  return std::find(names.begin(), names.end(), key) != names.end();
}

std::string query_once(const std::string& server, std::string_view query, const WhoisOptions& opts,
                       NetMeter& meter) {
  net::Endpoint ep{server, 43};
  if (auto it = opts.server_overrides.find(server); it != opts.server_overrides.end()) {
    ep = net::Endpoint::parse(it->second, 43);
  }
  meter.begin(Channel::whois);
  const auto addrs = net::resolve_host(ep.host);
  if (addrs.empty()) throw ConnectError("cannot resolve WHOIS server " + server);

  const auto deadline = steady_clock::now() + opts.timeout;
  for (const auto& ip : addrs) {
    const auto left = duration_cast<milliseconds>(deadline - steady_clock::now());
    if (left.count() <= 0) break;
    auto conn = net::connect_with_timeout(ip, ep.port, left);
    if (conn.status != net::ConnectStatus::connected) continue;
    std::string request(query);
    request += "\r\n";
    if (!net::send_all(conn.socket, request, deadline)) throw ConnectError("failed to send query to " + server);
    return net::recv_to_eof(conn.socket, deadline, opts.max_response_bytes);
  }
  throw ConnectError("cannot connect to WHOIS server " + server);
}

}  // namespace

std::optional<std::string> find_referral(std::string_view response) {
  std::optional<std::string> found;
  for_each_field(response, [&](const std::string& key, std::string_view value) {
    if (found) return;
    if (is_one_of(key, {"refer", "whois", "registrar whois server", "referralserver"})) found = server_name(value);
  });
  return found;
}

WhoisRecord parse_whois(std::string_view response) {
  WhoisRecord rec;
  rec.raw = std::string(response);
  for_each_field(response, [&](const std::string& key, std::string_view value) {
    if (is_one_of(key, {"registrar", "sponsoring registrar", "registrar name"})) {
      if (!rec.registrar) rec.registrar = std::string(value);
    } else if (is_one_of(key, {"name server", "nserver", "nameserver", "nameservers", "name servers"})) {
      std::string ns = lower(value.substr(0, value.find_first_of(" \t")));
      while (!ns.empty() && ns.back() == '.') ns.pop_back();
      if (!ns.empty() && std::find(rec.nameservers.begin(), rec.nameservers.end(), ns) == rec.nameservers.end()) {
        rec.nameservers.push_back(ns);
      }
    } else if (is_one_of(key, {"creation date", "created", "registered on", "registration time", "created on"})) {
      if (!rec.created) rec.created = parse_date(value);
    } else if (is_one_of(key, {"updated date", "last-modified", "last updated", "changed", "updated"})) {
      if (!rec.updated) rec.updated = parse_date(value);
    } else if (is_one_of(key, {"registry expiry date", "registrar registration expiration date", "expiration date",
                               "expires", "expiry date", "paid-till"})) {
      if (!rec.expires) rec.expires = parse_date(value);
    }
  });
  return rec;
}

WhoisRecord whois_lookup(const Target& query, const WhoisOptions& opts, NetMeter* meter) {
  if (query.is_ip()) {
    const auto scope = classify_scope(query);
    if (scope == AddressScope::private_use || scope == AddressScope::loopback) {
      throw InvalidArgument("WHOIS needs a domain or a public address");
    }
  }
  if (opts.max_hops < 1) throw InvalidArgument("max_hops must be at least 1");
  auto& m = meter_or_default(meter);

  std::vector<std::string> chain;
  WhoisRecord last;
  std::string server = lower(opts.root_server);
  while (true) {
    const std::string response = query_once(server, query.canonical_text(), opts, m);
    if (trim(response).empty()) throw EmptyResponse("empty WHOIS response from " + server);
    chain.push_back(server);
    last = parse_whois(response);
    last.server_chain = chain;
    last.queried = query.canonical_text();

    const auto next = find_referral(response);
    if (!next || *next == server) break;
    if (std::find(chain.begin(), chain.end(), *next) != chain.end()) {
      throw ReferralLoop("WHOIS referral loop back to " + *next, last);
    }
    if (static_cast<int>(chain.size()) >= opts.max_hops) break;
    server = *next;
  }
  return last;
}

}  // namespace ipscope::probes
