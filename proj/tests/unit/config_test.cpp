#include <gtest/gtest.h>

#include "ipscope/config.hpp"
#include "ipscope/error.hpp"
#include "support.hpp"

using namespace ipscope;

TEST(ConfigTest, DefaultsWhenEmpty) {
  auto c = config_from_json(json::object());
  EXPECT_EQ(c.listen, "127.0.0.1:8080");
  EXPECT_FALSE(c.dns);
  EXPECT_TRUE(c.providers.empty());
  EXPECT_EQ(c.session_ttl, std::chrono::seconds(3600));
  EXPECT_EQ(c.probes.scan_port_set, "top20");
}

TEST(ConfigTest, RelativePathsResolveAgainstBaseDir) {
  auto c = config_from_json(json::parse(R"({
    "store_path": "data/cache.db",
    "datasets": [{"id": "tor_exits", "kind": "ip_list", "path": "lists/tor.txt"},
                 {"id": "geo", "kind": "geo", "path": "/abs/geo.csv", "source_uri": "https://example.test/geo.csv"}],
    "console_dir": "web"
  })"),
                            "/etc/ipscope");
  EXPECT_EQ(c.store_path, "/etc/ipscope/data/cache.db");
  ASSERT_EQ(c.datasets.size(), 2u);
  EXPECT_EQ(c.datasets[0].path, "/etc/ipscope/lists/tor.txt");
  EXPECT_EQ(c.datasets[0].kind, datasets::DatasetKind::exact_ips);
  EXPECT_EQ(c.datasets[1].path, "/abs/geo.csv");
  EXPECT_EQ(c.datasets[1].source_uri, "https://example.test/geo.csv");
  EXPECT_EQ(c.console_dir, "/etc/ipscope/web");
  EXPECT_EQ(config_from_json(json{{"store_path", ":memory:"}}, "/x").store_path, ":memory:");
}

TEST(ConfigTest, ParsesNestedSections) {
  auto c = config_from_json(json::parse(R"({
    "dns": {"server": "127.0.0.1", "port": 5353, "timeout_ms": 700},
    "dnsbl_zones": [{"zone": "bl.test", "listed_codes": ["127.0.0.2"], "weight": 2}],
    "whois": {"root_server": "whois.test:43", "max_hops": 2, "server_overrides": {"com": "whois.com.test"}},
    "detectors": {"allow_private": true, "threat_threshold": 60},
    "probes": {"scan_parallelism": 8, "allow_icmp": false},
    "ttl": {"detection_s": 120},
    "session_ttl_s": 90
  })"));
  ASSERT_TRUE(c.dns);
  EXPECT_EQ(c.dns->port, 5353);
  EXPECT_EQ(c.dns->timeout, std::chrono::milliseconds(700));
  ASSERT_EQ(c.dnsbl_zones.size(), 1u);
  EXPECT_EQ(c.dnsbl_zones[0].weight, 2.0);
  EXPECT_EQ(c.whois.max_hops, 2);
  EXPECT_TRUE(c.detectors.allow_private);
  EXPECT_EQ(c.detectors.threat_threshold, 60);
  EXPECT_EQ(c.probes.scan_parallelism, 8);
  EXPECT_FALSE(c.probes.allow_icmp);
  EXPECT_EQ(c.ttl.ttl_for(FeatureKind::vpn), 120);
  EXPECT_EQ(c.session_ttl, std::chrono::seconds(90));
}

TEST(ConfigTest, RejectsBadDocuments) {
  EXPECT_THROW(config_from_json(json::array()), InvalidArgument);
  EXPECT_THROW(config_from_json(json{{"dns", {{"server", "resolver.test"}}}}), InvalidArgument);
  EXPECT_THROW(config_from_json(json{{"detectors", {{"threat_threshold", 101}}}}), InvalidArgument);
  EXPECT_THROW(config_from_json(json::parse(R"({"datasets":[{"id":"x","kind":"parquet"}]})")), InvalidArgument);
  EXPECT_THROW(config_from_json(json::parse(R"({"datasets":[{"kind":"geo"}]})")), InvalidArgument);
  EXPECT_THROW(config_from_json(json{{"store_path", 5}}), InvalidArgument);
}

TEST(ConfigTest, LoadsFromFileRelativeToItsDirectory) {
  testsupport::TempDir dir;
  const auto path = dir.write("ipscope.json", R"({"store_path": "c.db"})");
  EXPECT_EQ(load_config(path).store_path, dir.file("c.db"));
  EXPECT_THROW(load_config(dir.file("missing.json")), IoError);
  EXPECT_THROW(load_config(dir.write("bad.json", "{nope")), InvalidArgument);
}

TEST(ConfigTest, ConfigPathFromFlagOrEnvironment) {
  {
    testsupport::ScopedEnv env("IPSCOPE_CONFIG", "/from/env.json");
    EXPECT_EQ(resolve_config_path(std::string("/flag.json")), "/flag.json");
    EXPECT_EQ(resolve_config_path(std::nullopt), "/from/env.json");
  }
  testsupport::ScopedEnv env("IPSCOPE_CONFIG", "");
  EXPECT_FALSE(resolve_config_path(std::nullopt));
}
