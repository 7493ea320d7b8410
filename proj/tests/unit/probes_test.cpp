#include <gtest/gtest.h>

#include <algorithm>
#include <mutex>
#include <set>

#include "ipscope/error.hpp"
#include "ipscope/liveness.hpp"
#include "ipscope/port_scan.hpp"
#include "ipscope/socket.hpp"
#include "ipscope/whois.hpp"
#include "support.hpp"

using namespace ipscope;
using namespace ipscope::probes;
using namespace std::chrono_literals;
using testsupport::BlackholePort;
using testsupport::Listener;
using testsupport::MockWhois;

TEST(PortSpec, NamedSetsAndLists) {
  EXPECT_EQ(default_port_set("top20").size(), 20u);
  EXPECT_EQ(default_port_set("proxy"), (std::vector<std::uint16_t>{1080, 3128, 8080, 8888}));
  EXPECT_EQ(default_port_set("full_1_1024").size(), 1024u);
  EXPECT_THROW(default_port_set("everything"), UnknownPortSet);
  EXPECT_EQ(parse_port_spec("80,22,8000-8002,22"), (std::vector<std::uint16_t>{22, 80, 8000, 8001, 8002}));
  EXPECT_EQ(parse_port_spec("1-1024").size(), 1024u);
  EXPECT_THROW(parse_port_spec("0"), InvalidArgument);
  EXPECT_THROW(parse_port_spec("70000"), InvalidArgument);
  EXPECT_THROW(parse_port_spec("10-5"), InvalidArgument);
  EXPECT_THROW(parse_port_spec(""), InvalidArgument);
  EXPECT_THROW(parse_port_spec("abc"), UnknownPortSet);
}

TEST(Consent, OnlyPrivateAndLoopbackAreExempt) {
  EXPECT_FALSE(needs_consent(*IpAddress::parse("127.0.0.1")));
  EXPECT_FALSE(needs_consent(*IpAddress::parse("10.1.1.1")));
  EXPECT_FALSE(needs_consent(*IpAddress::parse("::1")));
  EXPECT_TRUE(needs_consent(*IpAddress::parse("8.8.8.8")));
  EXPECT_TRUE(needs_consent(*IpAddress::parse("203.0.113.9")));
  EXPECT_THROW(require_consent(*IpAddress::parse("8.8.8.8"), false), ConsentRequired);
  EXPECT_NO_THROW(require_consent(*IpAddress::parse("8.8.8.8"), true));
}

TEST(PortScan, RefusesPublicTargetWithoutConsentBeforeAnyNetwork) {
  NetMeter meter;
  ScanOptions opts;
  EXPECT_THROW(scan_ports(parse_target("8.8.8.8"), {53}, opts, system_clock(), &meter), ConsentRequired);
  EXPECT_EQ(meter.total(), 0u);
}

TEST(PortScan, ValidatesOptions) {
  ScanOptions opts;
  opts.parallelism = 0;
  EXPECT_THROW(scan_ports(parse_target("127.0.0.1"), {1}, opts), InvalidArgument);
  opts.parallelism = 4;
  opts.timeout_ms = 0;
  EXPECT_THROW(scan_ports(parse_target("127.0.0.1"), {1}, opts), InvalidArgument);
  opts.timeout_ms = 100;
  EXPECT_THROW(scan_ports(parse_target("127.0.0.1"), {}, opts), InvalidArgument);
}

TEST(PortScan, OpenClosedAndInflightBound) {
  std::vector<std::unique_ptr<Listener>> listeners;
  std::set<std::uint16_t> open;
  for (std::uint16_t p = 21000; p <= 21050; p += 7) {
    auto l = std::make_unique<Listener>(p);
    if (l->ok()) {
      open.insert(p);
      listeners.push_back(std::move(l));
    }
  }
  ASSERT_FALSE(open.empty());

  std::vector<std::uint16_t> ports;
  for (std::uint16_t p = 21000; p <= 21050; ++p) ports.push_back(p);
  std::mutex mu;
  std::size_t max_inflight = 0;
  ScanOptions opts;
  opts.timeout_ms = 500;
  opts.parallelism = 5;
  opts.on_inflight = [&](std::size_t n) {
    std::lock_guard lock(mu);
    max_inflight = std::max(max_inflight, n);
  };
  NetMeter meter;
  auto res = scan_ports(parse_target("127.0.0.1"), ports, opts, system_clock(), &meter);
  ASSERT_EQ(res.entries.size(), ports.size());
  EXPECT_LE(max_inflight, 5u);
  EXPECT_GT(max_inflight, 0u);
  EXPECT_EQ(meter.count(Channel::tcp), ports.size());
  for (std::size_t i = 0; i < ports.size(); ++i) {
    const auto& e = res.entries[i];
    EXPECT_EQ(e.port, ports[i]);
    if (open.count(e.port)) {
      EXPECT_EQ(e.state, PortState::open) << e.port;
      EXPECT_TRUE(e.latency_ms.has_value());
    } else {
      auto probe = net::connect_with_timeout(*IpAddress::parse("127.0.0.1"), e.port, 500ms);
      const auto expected = probe.status == net::ConnectStatus::connected ? PortState::open : PortState::closed;
      EXPECT_EQ(e.state, expected) << e.port;
    }
  }
  EXPECT_EQ(res.params.parallelism, 5);
  EXPECT_LE(res.started_at, res.finished_at);
}

TEST(PortScan, FilteredPortsHitTheTimeout) {
  BlackholePort hole;
  if (!hole.ok()) GTEST_SKIP() << "kernel accepted every queued connect";
  ScanOptions opts;
  opts.timeout_ms = 300;
  const auto start = std::chrono::steady_clock::now();
  auto res = scan_ports(parse_target("127.0.0.1"), {hole.port()}, opts);
  EXPECT_LT(std::chrono::steady_clock::now() - start, 2s);
  ASSERT_EQ(res.entries.size(), 1u);
  EXPECT_EQ(res.entries[0].state, PortState::filtered);
  EXPECT_FALSE(res.entries[0].latency_ms.has_value());
}

TEST(Liveness, MedianOfSamples) {
  EXPECT_FALSE(median({}));
  EXPECT_EQ(*median({3.0}), 3.0);
  EXPECT_EQ(*median({5.0, 1.0, 3.0}), 3.0);
  EXPECT_EQ(*median({4.0, 1.0, 3.0, 2.0}), 2.5);
}

TEST(Liveness, LoopbackTcpIsReachable) {
  LivenessOptions opts;
  opts.allow_icmp = false;
  opts.attempts = 3;
  opts.timeout_ms = 500;
  auto r = check_liveness(parse_target("127.0.0.1"), opts);
  EXPECT_EQ(r.method, LivenessMethod::tcp_connect);
  EXPECT_TRUE(r.reachable);
  EXPECT_TRUE(r.rtt_ms.has_value());
  EXPECT_EQ(r.attempts, 3);
}

TEST(Liveness, LoopbackIcmpWhenPermitted) {
  if (!icmp_available()) GTEST_SKIP() << "no ICMP socket permission";
  LivenessOptions opts;
  opts.timeout_ms = 500;
  auto r = check_liveness(parse_target("127.0.0.1"), opts);
  EXPECT_EQ(r.method, LivenessMethod::icmp_echo);
  EXPECT_TRUE(r.reachable);
}

TEST(Liveness, ValidatesAndGates) {
  LivenessOptions opts;
  opts.attempts = 0;
  EXPECT_THROW(check_liveness(parse_target("127.0.0.1"), opts), InvalidArgument);
  opts.attempts = 11;
  EXPECT_THROW(check_liveness(parse_target("127.0.0.1"), opts), InvalidArgument);
  opts.attempts = 1;
  NetMeter meter;
  EXPECT_THROW(check_liveness(parse_target("8.8.8.8"), opts, &meter), ConsentRequired);
  EXPECT_EQ(meter.total(), 0u);
}

TEST(Liveness, RefusedConnectCountsAsReachable) {
  LivenessOptions opts;
  opts.allow_icmp = false;
  opts.attempts = 1;
  opts.tcp_ports = {testsupport::closed_port()};
  auto r = check_liveness(parse_target("127.0.0.1"), opts);
  EXPECT_TRUE(r.reachable);
}

TEST(Liveness, UnreachableWithinBound) {
  BlackholePort hole;
  if (!hole.ok()) GTEST_SKIP() << "kernel accepted every queued connect";
  LivenessOptions opts;
  opts.allow_icmp = false;
  opts.attempts = 2;
  opts.timeout_ms = 300;
  opts.tcp_ports = {hole.port()};
  const auto start = std::chrono::steady_clock::now();
  auto r = check_liveness(parse_target("127.0.0.1"), opts);
  EXPECT_LT(std::chrono::steady_clock::now() - start, 3s);
  EXPECT_FALSE(r.reachable);
  EXPECT_FALSE(r.rtt_ms.has_value());
}

TEST(WhoisParse, ExtractsFields) {
  const std::string text =
      "% comment\n"
      "Domain Name: EXAMPLE.COM\n"
      "Registrar WHOIS Server: whois.registrar.test\n"
      "Updated Date: 2024-08-14T07:01:34Z\n"
      "Creation Date: 1995-08-14T04:00:00Z\n"
      "Registry Expiry Date: 2025-08-13T04:00:00Z\n"
      "Registrar: RESERVED-Internet Assigned Numbers Authority\n"
      "Name Server: A.IANA-SERVERS.NET.\n"
      "Name Server: B.IANA-SERVERS.NET\n"
      "Name Server: a.iana-servers.net\n";
  auto rec = parse_whois(text);
  EXPECT_EQ(rec.registrar, "RESERVED-Internet Assigned Numbers Authority");
  EXPECT_EQ(rec.nameservers, (std::vector<std::string>{"a.iana-servers.net", "b.iana-servers.net"}));
  EXPECT_EQ(rec.created, parse_rfc3339("1995-08-14T04:00:00Z"));
  EXPECT_EQ(rec.updated, parse_rfc3339("2024-08-14T07:01:34Z"));
  EXPECT_EQ(rec.expires, parse_rfc3339("2025-08-13T04:00:00Z"));
  EXPECT_EQ(rec.raw, text);
  EXPECT_EQ(find_referral(text), "whois.registrar.test");
}

TEST(WhoisParse, ReferralVariants) {
  EXPECT_EQ(find_referral("refer:        whois.verisign-grs.com\n"), "whois.verisign-grs.com");
  EXPECT_EQ(find_referral("ReferralServer: whois://whois.ripe.net\n"), "whois.ripe.net");
  EXPECT_FALSE(find_referral("ReferralServer: rwhois://rwhois.example.net:4321\n"));
  EXPECT_FALSE(find_referral("domain: example\n"));
  auto rec = parse_whois("created: 2001-02-03\n");
  EXPECT_EQ(rec.created, parse_iso_date("2001-02-03"));
}

TEST(WhoisLookup, FollowsTwoHopChain) {
  MockWhois b("Domain Name: EXAMPLE.COM\nRegistrar: Example Registrar, Inc.\nName Server: NS1.EXAMPLE.COM\n"
              "Creation Date: 1995-08-14T04:00:00Z\n");
  MockWhois a("refer: whois.b.test\n\ndomain: COM\n");
  WhoisOptions opts;
  opts.root_server = "whois.a.test";
  opts.timeout = 2000ms;
  opts.server_overrides = {{"whois.a.test", a.endpoint()}, {"whois.b.test", b.endpoint()}};
  NetMeter meter;
  auto rec = whois_lookup(parse_target("Example.com"), opts, &meter);
  EXPECT_EQ(rec.server_chain, (std::vector<std::string>{"whois.a.test", "whois.b.test"}));
  EXPECT_EQ(rec.registrar, "Example Registrar, Inc.");
  EXPECT_EQ(rec.nameservers, (std::vector<std::string>{"ns1.example.com"}));
  EXPECT_EQ(rec.queried, "example.com");
  EXPECT_EQ(a.queries(), (std::vector<std::string>{"example.com"}));
  EXPECT_EQ(b.queries(), (std::vector<std::string>{"example.com"}));
  EXPECT_EQ(meter.count(Channel::whois), 2u);
}

TEST(WhoisLookup, LoopRaisesWithPartialRecord) {
  MockWhois a("refer: whois.b.test\n");
  MockWhois b("Registrar: Loop Registrar\nwhois: whois.a.test\n");
  WhoisOptions opts;
  opts.root_server = "whois.a.test";
  opts.timeout = 2000ms;
  opts.server_overrides = {{"whois.a.test", a.endpoint()}, {"whois.b.test", b.endpoint()}};
  try {
    whois_lookup(parse_target("example.com"), opts);
    FAIL() << "expected ReferralLoop";
  } catch (const ReferralLoop& e) {
    EXPECT_EQ(e.partial().registrar, "Loop Registrar");
    EXPECT_EQ(e.partial().server_chain, (std::vector<std::string>{"whois.a.test", "whois.b.test"}));
  }
  EXPECT_EQ(a.queries().size(), 1u);
}

TEST(WhoisLookup, SelfReferralAndHopLimit) {
  MockWhois c("Registrar: C\n");
  MockWhois b("Registrar: B\nrefer: whois.c.test\n");
  MockWhois a("refer: whois.a.test\nRegistrar: A\n");
  WhoisOptions opts;
  opts.root_server = "whois.a.test";
  opts.timeout = 2000ms;
  opts.server_overrides = {
      {"whois.a.test", a.endpoint()}, {"whois.b.test", b.endpoint()}, {"whois.c.test", c.endpoint()}};
  EXPECT_EQ(whois_lookup(parse_target("example.com"), opts).registrar, "A");

  opts.root_server = "whois.b.test";
  opts.max_hops = 1;
  auto rec = whois_lookup(parse_target("example.com"), opts);
  EXPECT_EQ(rec.registrar, "B");
  EXPECT_TRUE(c.queries().empty());
}

TEST(WhoisLookup, ErrorsAndRefusals) {
  MockWhois empty("   \r\n");
  WhoisOptions opts;
  opts.root_server = "whois.e.test";
  opts.timeout = 1000ms;
  opts.server_overrides = {{"whois.e.test", empty.endpoint()},
                           {"whois.dead.test", "127.0.0.1:" + std::to_string(testsupport::closed_port())}};
  EXPECT_THROW(whois_lookup(parse_target("example.com"), opts), EmptyResponse);
  opts.root_server = "whois.dead.test";
  EXPECT_THROW(whois_lookup(parse_target("example.com"), opts), ConnectError);
  EXPECT_THROW(whois_lookup(parse_target("10.0.0.1"), opts), InvalidArgument);
  EXPECT_THROW(whois_lookup(parse_target("127.0.0.1"), opts), InvalidArgument);
  NetMeter meter;
  meter.set_offline(true);
  EXPECT_THROW(whois_lookup(parse_target("example.com"), opts, &meter), OfflineViolation);
}
