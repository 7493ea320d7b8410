#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <thread>

#include <httplib.h>

#include "ipscope/datasets.hpp"
#include "ipscope/error.hpp"
#include "support.hpp"

using namespace ipscope;
using namespace ipscope::datasets;

namespace {

std::optional<std::uint32_t> linear_lpm(const std::vector<std::pair<IpPrefix, std::uint32_t>>& entries,
                                        const IpAddress& ip) {
  std::optional<std::uint32_t> best;
  int best_len = -1;
  for (const auto& [p, id] : entries) {
    if (p.network.family() != ip.family()) continue;
    bool inside = true;
    for (unsigned b = 0; b < p.length; ++b) {
      if (p.network.bit(b) != ip.bit(b)) {
        inside = false;
        break;
      }
    }
    if (inside && static_cast<int>(p.length) >= best_len) {
      best_len = static_cast<int>(p.length);
      best = id;
    }
  }
  return best;
}

}  // namespace

TEST(PrefixIndexTest, MatchesLinearScanOracle) {
  std::mt19937 rng(1234);
  for (int round = 0; round < 20; ++round) {
    PrefixIndex index;
    std::vector<std::pair<IpPrefix, std::uint32_t>> entries;
    for (std::uint32_t i = 0; i < 200; ++i) {
      const unsigned len = rng() % 33;
      const auto p = IpPrefix{IpAddress::v4(rng() & (rng() | 0xff000000u)).masked(len), len};
      index.insert(p, i);
      std::erase_if(entries, [&](const auto& e) { return e.first == p; });
      entries.emplace_back(p, i);
    }
    for (int q = 0; q < 1000; ++q) {
      const IpAddress ip = q % 2 == 0 ? entries[rng() % entries.size()].first.network : IpAddress::v4(rng());
      const auto expected = linear_lpm(entries, ip);
      const auto got = index.longest_match(ip);
      ASSERT_EQ(got.has_value(), expected.has_value());
      if (got) ASSERT_EQ(got->id, *expected);
    }
  }
}

TEST(PrefixIndexTest, Ipv6AndReplacement) {
  PrefixIndex index;
  EXPECT_FALSE(index.insert(*IpPrefix::parse("2001:db8::/32"), 1));
  EXPECT_FALSE(index.insert(*IpPrefix::parse("2001:db8:1::/48"), 2));
  EXPECT_TRUE(index.insert(*IpPrefix::parse("2001:db8::/32"), 3));
  EXPECT_EQ(index.size(), 2u);
  EXPECT_EQ(index.longest_match(*IpAddress::parse("2001:db8:1::5"))->id, 2u);
  EXPECT_EQ(index.longest_match(*IpAddress::parse("2001:db8:2::5"))->id, 3u);
  EXPECT_FALSE(index.longest_match(*IpAddress::parse("2001:db9::1")));
  EXPECT_FALSE(index.longest_match(*IpAddress::parse("32.1.13.184")));
}

TEST(PrefixIndexTest, DefaultRouteMatchesEverything) {
  PrefixIndex index;
  index.insert(*IpPrefix::parse("0.0.0.0/0"), 9);
  EXPECT_EQ(index.longest_match(*IpAddress::parse("1.2.3.4"))->id, 9u);
  EXPECT_FALSE(index.longest_match(*IpAddress::parse("::1")));
}

TEST(GeoCsv, ParsesAndRejectsRows) {
  const std::string csv =
      "cidr,country,city,lat,lon\n"
      "203.0.113.0/24,nl,Amsterdam,52.37,4.89\n"
      "203.0.113.128/25,DE,\"Berlin, Mitte\",52.52,13.40\n"
      "198.51.100.0/24,US,Austin,30.27,-97.74\n"
      "198.51.100.0/24,US,Dallas,32.78,-96.80\n"
      "2001:db8::/32,FR,Paris,48.85,2.35\n"
      "10.0.0.0/8,GB,London,51.5,-0.12\n"
      "172.16.0.0/12,JP,Tokyo,35.68,139.69\n"
      "192.168.0.0/16,CA,Toronto,43.65,-79.38\n"
      "100.64.0.0/10,AU,Sydney,-33.86,151.2\n"
      "8.8.8.0/24,US,Mountain View,37.4,-122.08\n"
      "bad-row,XX,Nowhere,0,0\n";
  auto ds = parse_geo_csv(csv, "geo", "mem", from_unix_seconds(0));
  EXPECT_EQ(ds->manifest.rejected, (std::vector<std::size_t>{12}));
  EXPECT_EQ(ds->manifest.duplicates, 1u);
  EXPECT_EQ(ds->manifest.entry_count, 9u);
  const auto& table = std::get<GeoTable>(ds->data);
  auto r = table.lookup(*IpAddress::parse("203.0.113.200"));
  ASSERT_TRUE(r);
  EXPECT_EQ(r->country, "DE");
  EXPECT_EQ(r->city, "Berlin, Mitte");
  EXPECT_EQ(table.lookup(*IpAddress::parse("203.0.113.5"))->country, "NL");
  EXPECT_EQ(table.lookup(*IpAddress::parse("198.51.100.1"))->city, "Dallas");
  EXPECT_FALSE(table.lookup(*IpAddress::parse("1.1.1.1")));
}

TEST(GeoCsv, RejectsBadHeaderAndMostlyGarbage) {
  EXPECT_THROW(parse_geo_csv("ip,cc\n1.2.3.0/24,US\n", "geo", "", {}), FormatError);
  EXPECT_THROW(parse_geo_csv("", "geo", "", {}), FormatError);
  EXPECT_THROW(parse_geo_csv("cidr,country,city,lat,lon\n1.2.3.0/24,US,X,100,0\n", "geo", "", {}), FormatError);
}

TEST(IpList, SkipsCommentsAndCountsDuplicates) {
  auto ds = parse_ip_list("# exits\n1.2.3.4\n1.2.3.4\n\n2001:db8::1\nnot-an-ip\n", "tor_exits", "", {});
  EXPECT_EQ(ds->manifest.entry_count, 2u);
  EXPECT_EQ(ds->manifest.duplicates, 1u);
  EXPECT_EQ(ds->manifest.rejected, (std::vector<std::size_t>{6}));
  EXPECT_TRUE(std::get<IpSet>(ds->data).contains(*IpAddress::parse("2001:db8::1")));
}

TEST(CidrRanges, ParsesLabelsAndRejectsEntries) {
  const std::string doc = R"([{"prefix":"198.51.100.0/24","label":"ExampleVPN"},{"prefix":"198.51.100.64/26"},
    {"prefix":"2001:db8::/48","label":"v6"},{"prefix":"1.0.0.0/8"},{"prefix":"2.0.0.0/8"},{"prefix":"3.0.0.0/8"},
    {"prefix":"4.0.0.0/8"},{"prefix":"5.0.0.0/8"},{"prefix":"6.0.0.0/8"},{"prefix":"7.0.0.0/8"},{"nope":1}])";
  auto ds = parse_cidr_ranges(doc, "vpn_ranges", "", {});
  EXPECT_EQ(ds->manifest.rejected, (std::vector<std::size_t>{10}));
  const auto& set = std::get<CidrSet>(ds->data);
  EXPECT_EQ(set.match(*IpAddress::parse("198.51.100.70"))->label, "");
  EXPECT_EQ(set.match(*IpAddress::parse("198.51.100.7"))->label, "ExampleVPN");
  EXPECT_THROW(parse_cidr_ranges("{}", "x", "", {}), FormatError);
  EXPECT_THROW(parse_cidr_ranges("[", "x", "", {}), FormatError);
}

TEST(RegistryTest, DeclaredButUnloadedRaises) {
  Registry reg;
  reg.declare(kTorExits, DatasetKind::exact_ips);
  EXPECT_THROW(reg.contains(kTorExits, parse_target("1.2.3.4")), DatasetNotLoaded);
  EXPECT_THROW(reg.contains("never", parse_target("1.2.3.4")), UnknownDataset);
  EXPECT_THROW(reg.lookup_geo(parse_target("1.2.3.4")), DatasetNotLoaded);
  EXPECT_FALSE(reg.is_loaded(kTorExits));
  EXPECT_TRUE(reg.is_known(kTorExits));
}

TEST(RegistryTest, LoadsFromFilesAndReportsStaleness) {
  testsupport::TempDir dir;
  ManualClock clock(from_unix_seconds(1000));
  Registry reg(clock);
  const auto path = dir.write("exits.txt", "1.2.3.4\n");
  auto m = reg.load_ip_list(path, kTorExits);
  EXPECT_EQ(m.entry_count, 1u);
  auto hit = reg.contains(kTorExits, parse_target("1.2.3.4"));
  EXPECT_TRUE(hit.member);
  EXPECT_EQ(hit.matched, "1.2.3.4");
  EXPECT_FALSE(reg.contains(kTorExits, parse_target("1.2.3.5")).member);
  EXPECT_THROW(reg.contains(kTorExits, parse_target("example.com")), UnsupportedTarget);
  EXPECT_FALSE(reg.is_stale(kTorExits, std::chrono::seconds(60)));
  clock.advance(std::chrono::seconds(61));
  EXPECT_TRUE(reg.is_stale(kTorExits, std::chrono::seconds(60)));
  EXPECT_THROW(reg.load_ip_list(dir.file("missing.txt"), "x"), IoError);
}

TEST(RegistryTest, FailedRefreshKeepsOldSnapshot) {
  testsupport::TempDir dir;
  Registry reg;
  const auto path = dir.write("exits.txt", "1.2.3.4\n");
  reg.load_ip_list(path, kTorExits);
  dir.write("exits.txt", "<html>error page</html>\n");
  EXPECT_THROW(reg.refresh_dataset(kTorExits), FormatError);
  EXPECT_TRUE(reg.contains(kTorExits, parse_target("1.2.3.4")).member);
  EXPECT_THROW(reg.refresh_dataset(kTorExits, dir.file("gone.txt")), FetchError);
  EXPECT_TRUE(reg.contains(kTorExits, parse_target("1.2.3.4")).member);
  EXPECT_THROW(reg.refresh_dataset("unknown"), UnknownDataset);
}

TEST(RegistryTest, RefreshOverHttpCountsMeter) {
  httplib::Server server;
  server.Get("/exits", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("9.9.9.9\n8.8.8.8\n", "text/plain");
  });
  server.Get("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  NetMeter meter;
  Registry reg;
  reg.declare(kTorExits, DatasetKind::exact_ips);
  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  auto rep = reg.refresh_dataset(kTorExits, base + "/exits", &meter);
  EXPECT_EQ(rep.old_count, 0u);
  EXPECT_EQ(rep.new_count, 2u);
  EXPECT_EQ(meter.count(Channel::http), 1u);
  EXPECT_THROW(reg.refresh_dataset(kTorExits, base + "/broken", &meter), FetchError);
  EXPECT_TRUE(reg.contains(kTorExits, parse_target("9.9.9.9")).member);
  EXPECT_EQ(reg.get(kTorExits)->manifest.source_uri, base + "/exits");

  server.stop();
  t.join();
}

TEST(RegistryTest, ReadersNeverSeeAMixedSnapshot) {
  Registry reg;
  std::string a, b;
  for (int i = 1; i <= 200; ++i) a += "10.0.0." + std::to_string(i) + "\n";
  for (int i = 1; i <= 200; ++i) b += "10.1.0." + std::to_string(i) + "\n";
  reg.install(parse_ip_list(a, "set", "a", {}));

  std::atomic<bool> stop{false};
  std::atomic<int> mixed{0};
  std::vector<std::thread> readers;
  for (int r = 0; r < 4; ++r) {
    readers.emplace_back([&] {
      while (!stop) {
        auto ds = reg.get("set");
        const auto& set = std::get<IpSet>(ds->data);
        const bool in_a = set.contains(*IpAddress::parse("10.0.0.1"));
        const bool in_b = set.contains(*IpAddress::parse("10.1.0.200"));
        if (in_a == in_b || set.size() != 200) ++mixed;
      }
    });
  }
  for (int i = 0; i < 200; ++i) reg.install(parse_ip_list(i % 2 ? a : b, "set", "x", {}));
  stop = true;
  for (auto& t : readers) t.join();
  EXPECT_EQ(mixed.load(), 0);
}
