#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "ipscope/cli.hpp"
#include "ipscope/service.hpp"
#include "support.hpp"

using namespace ipscope;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
  json doc() const { return json::parse(out, nullptr, false); }
};

class CliTest : public ::testing::Test {
 protected:
  Result run(std::vector<std::string> args, bool with_config = true) {
    std::vector<std::string> full{"ipscope"};
    if (with_config) {
      full.push_back("--config");
      full.push_back(config_path);
    }
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : full) argv.push_back(a.c_str());
    std::ostringstream out, err;
    cli::Env env;
    env.clock = &clock;
    env.meter = &meter;
    env.read_secret = [this](std::string_view) { return secret; };
    Result r;
    r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err, env);
    r.out = out.str();
    r.err = err.str();
    return r;
  }

  testsupport::MockStack stack;
  std::string config_path = stack.write_config();
  ManualClock clock{from_unix_seconds(1700000000)};
  NetMeter meter;
  std::string secret = "s3cret";
};

}  // namespace

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}, false).code, cli::kOk);
  EXPECT_EQ(run({}, false).code, cli::kUsage);
  EXPECT_EQ(run({"analyze"}).code, cli::kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(run({"analyze", "not_a_target!"}).code, cli::kUsage);
  EXPECT_EQ(run({"analyze", "192.0.2.7", "--features", "tor,x-ray"}).code, cli::kUsage);
  EXPECT_EQ(run({"scan", "127.0.0.1", "--ports", "nonsense"}).code, cli::kUsage);
  EXPECT_EQ(meter.total(), 0u);
}

TEST_F(CliTest, AnalyzeRendersGlyphs) {
  auto r = run({"analyze", "192.0.2.7"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_NE(r.out.find("192.0.2.7"), std::string::npos);
  EXPECT_NE(r.out.find("● positive"), std::string::npos);
  EXPECT_NE(r.out.find("✗ negative"), std::string::npos);
  EXPECT_NE(r.out.find("Springfield"), std::string::npos);
}

TEST_F(CliTest, AnalyzeJsonIsAValidReport) {
  auto r = run({"--json", "analyze", "198.51.100.4", "--features", "vpn,geolocation"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const auto doc = r.doc();
  EXPECT_TRUE(validate_report_json(doc).empty());
  EXPECT_EQ(doc["results"]["vpn"]["verdict"], "positive");
  EXPECT_EQ(doc["geo"]["country"], "DE");
}

TEST_F(CliTest, OfflineWarmAndCold) {
  ASSERT_EQ(run({"analyze", "192.0.2.7"}).code, cli::kOk);
  const auto before = meter.total();
  auto warm = run({"--json", "analyze", "192.0.2.7", "--offline"});
  EXPECT_EQ(warm.code, cli::kOk);
  EXPECT_EQ(meter.total(), before);
  for (const auto& [k, v] : warm.doc()["from_cache"].items()) EXPECT_TRUE(v.get<bool>()) << k;

  auto cold = run({"--json", "analyze", "198.51.100.4", "--offline"});
  EXPECT_EQ(cold.code, cli::kOk);
  EXPECT_EQ(meter.total(), before);
  const auto doc = cold.doc();
  EXPECT_EQ(doc["results"]["vpn"]["verdict"], "positive");
  EXPECT_EQ(doc["results"]["bot"]["verdict"], "no_data");
  EXPECT_NE(cold.err.find("warning: bot unavailable"), std::string::npos);

  auto nothing = run({"analyze", "198.51.100.4", "--offline", "--features", "bot,threat"});
  EXPECT_EQ(nothing.code, cli::kFailure);
}

TEST_F(CliTest, ConsentExitCode) {
  auto r = run({"analyze", "192.0.2.7", "--features", "portscan"});
  EXPECT_EQ(r.code, cli::kConsent);
  EXPECT_EQ(run({"scan", "192.0.2.7", "--ports", "80"}).code, cli::kConsent);
  EXPECT_EQ(run({"ping", "192.0.2.7"}).code, cli::kConsent);
  EXPECT_EQ(meter.total(), 0u);
}

TEST_F(CliTest, ScanAndPingLoopback) {
  testsupport::Listener open;
  ASSERT_TRUE(open.ok());
  const auto closed = testsupport::closed_port();
  auto r = run({"--json", "scan", "127.0.0.1", "--ports", std::to_string(open.port()) + "," + std::to_string(closed)});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  const json entries = r.doc()["entries"];
  ASSERT_EQ(entries.size(), 2u);
  std::map<int, std::string> states;
  for (const auto& e : entries) states[e["port"].get<int>()] = e["state"].get<std::string>();
  EXPECT_EQ(states[open.port()], "open");
  EXPECT_EQ(states[closed], "closed");

  auto p = run({"ping", "127.0.0.1", "--tcp", "--attempts", "1"});
  EXPECT_EQ(p.code, cli::kOk) << p.err;
  EXPECT_NE(p.out.find("reachable"), std::string::npos);
}

TEST_F(CliTest, WhoisAgainstAMockServer) {
  testsupport::MockWhois server("Domain Name: EXAMPLE.TEST\r\nRegistrar: Example Registrar\r\n"
                                "Name Server: NS1.EXAMPLE.TEST\r\nName Server: ns1.example.test\r\n");
  auto r = run({"--json", "whois", "example.test", "--server", server.endpoint()});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_EQ(r.doc()["registrar"], "Example Registrar");
  EXPECT_EQ(r.doc()["nameservers"], json::array({"ns1.example.test"}));
}

TEST_F(CliTest, BlocklistCommand) {
  auto listed = run({"--json", "blocklist", "192.0.2.66"});
  ASSERT_EQ(listed.code, cli::kOk) << listed.err;
  EXPECT_EQ(listed.doc()["verdict"], "positive");
  auto clean = run({"blocklist", "192.0.2.1"});
  EXPECT_NE(clean.out.find("overall ✗ negative"), std::string::npos);
  EXPECT_EQ(run({"blocklist", "2001:db8::1"}).code, cli::kUsage);
}

TEST_F(CliTest, CompareWritesCsv) {
  const auto targets = stack.dir.write("targets.txt", "# sample\n192.0.2.7\n\n198.51.100.4\n203.0.113.9\n");
  auto r = run({"compare", "--targets", targets, "--csv", "-"});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 1 + 3 * 2 * 3);
  EXPECT_NE(r.out.find("198.51.100.4,mock1,vpn,positive"), std::string::npos);
  EXPECT_NE(r.out.find("203.0.113.9,mock0,proxy,positive"), std::string::npos);

  const auto csv_path = stack.dir.file("out.csv");
  auto grid = run({"compare", "--targets", targets, "--csv", csv_path});
  EXPECT_EQ(grid.code, cli::kOk);
  EXPECT_NE(grid.out.find("●"), std::string::npos);
  std::ifstream f(csv_path);
  std::string header;
  std::getline(f, header);
  EXPECT_EQ(header, "target,provider,feature,verdict");

  EXPECT_EQ(run({"compare", "--targets", stack.dir.file("missing.txt")}).code, cli::kUsage);
  EXPECT_EQ(run({"compare", "--targets", stack.dir.write("bad.txt", "300.1.1.1\n")}).code, cli::kUsage);
}

TEST_F(CliTest, UserManagement) {
  auto added = run({"user", "add", "alice", "--role", "admin"});
  ASSERT_EQ(added.code, cli::kOk) << added.err;
  EXPECT_EQ(run({"user", "add", "alice"}).code, cli::kConflict);
  secret = "";
  EXPECT_EQ(run({"user", "add", "bob"}).code, cli::kUsage);
  EXPECT_EQ(run({"user", "add", "carol", "--role", "root"}).code, cli::kUsage);

  auto token = run({"--json", "user", "token", "alice", "--scopes", "analyze,scan"});
  ASSERT_EQ(token.code, cli::kOk) << token.err;
  EXPECT_EQ(token.doc()["scopes"], json::array({"analyze", "scan"}));
  EXPECT_EQ(run({"user", "token", "nobody"}).code, cli::kUsage);

  auto totp = run({"--json", "user", "totp", "alice"});
  ASSERT_EQ(totp.code, cli::kOk);
  EXPECT_EQ(totp.doc()["secret"].get<std::string>().size(), 32u);
  EXPECT_EQ(run({"user", "totp", "alice", "--code", "000000"}).code, cli::kUsage);
}

TEST_F(CliTest, DatasetCommands) {
  auto list = run({"--json", "datasets", "list"});
  ASSERT_EQ(list.code, cli::kOk);
  EXPECT_EQ(list.doc().size(), 4u);
  const auto src = stack.dir.write("more_exits.txt", "192.0.2.7\n192.0.2.9\n192.0.2.10\n");
  auto r = run({"datasets", "refresh", "tor_exits", "--source", src});
  ASSERT_EQ(r.code, cli::kOk) << r.err;
  EXPECT_EQ(r.out, "tor_exits: 1 -> 3 entries\n");
  EXPECT_EQ(run({"datasets", "refresh", "nope"}).code, cli::kUsage);
}

TEST_F(CliTest, CacheMaintenance) {
  ASSERT_EQ(run({"analyze", "192.0.2.7", "--features", "tor"}).code, cli::kOk);
  auto exported = run({"cache", "export"});
  ASSERT_EQ(exported.code, cli::kOk);
  EXPECT_EQ(std::count(exported.out.begin(), exported.out.end(), '\n'), 1);
  const auto dump = stack.dir.write("dump.jsonl", exported.out);
  EXPECT_EQ(run({"--json", "cache", "purge"}).doc()["count"], 0);
  EXPECT_EQ(run({"--json", "cache", "import", dump}).doc()["count"], 0);
  EXPECT_EQ(run({"cache", "import", stack.dir.file("none.jsonl")}).code, cli::kFailure);
}

TEST_F(CliTest, ServeAnswersUntilStopped) {
  ASSERT_EQ(run({"user", "add", "alice", "--role", "analyst"}).code, cli::kOk);
  std::vector<std::string> args{"ipscope", "--config", config_path, "serve", "--listen", "127.0.0.1:0"};
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  int status = 0;
  std::string body;
  cli::Env env;
  env.clock = &clock;
  env.on_serving = [&](service::Service& svc, int port) {
    httplib::Client c("127.0.0.1", port);
    auto login = c.Post("/api/v1/auth/login", R"({"username":"alice","password":"s3cret"})", "application/json");
    if (login) {
      const auto token = json::parse(login->body).value("token", std::string());
      auto res = c.Post("/api/v1/analyze", {{"Authorization", "Bearer " + token}}, R"({"target":"192.0.2.7"})",
                        "application/json");
      if (res) {
        status = res->status;
        body = res->body;
      }
    }
    svc.stop();
  };
  EXPECT_EQ(cli::run(static_cast<int>(argv.size()), argv.data(), out, err, env), cli::kOk);
  EXPECT_EQ(status, 200);
  EXPECT_TRUE(validate_report_json(json::parse(body, nullptr, false)).empty());
  EXPECT_NE(err.str().find("\"path\":\"/api/v1/analyze\""), std::string::npos);
}
