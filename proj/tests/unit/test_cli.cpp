#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <gtest/gtest.h>
#include <json.hpp>

#ifndef DSHADOW_CLI
#define DSHADOW_CLI "dshadow"
#endif
#ifndef DSHADOW_FIXTURE_DIR
#define DSHADOW_FIXTURE_DIR "fixtures"
#endif

namespace {

struct Run {
  int status = -1;
  std::string out;
};

// Runs the CLI with stderr folded into stdout.
Run cli(const std::string& args) {
  const std::string cmd = std::string("\"") + DSHADOW_CLI + "\" " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n = 0;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int raw = pclose(p);
  r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return r;
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("dshadow_test_cli_" + name);
  std::filesystem::remove_all(p);
  return p;
}

std::string fixture(const std::string& name) { return std::string(DSHADOW_FIXTURE_DIR) + "/" + name; }

}  // namespace

TEST(Cli, NumericsCheckOnShippedFixtures) {
  const auto r = cli("numerics-check --fixtures \"" + std::string(DSHADOW_FIXTURE_DIR) + "\" --json");
  EXPECT_EQ(r.status, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["passed"], true);
}

TEST(Cli, MetricsHandFixture) {
  const auto r = cli("metrics \"" + fixture("metrics_tp1_tn1_fp1_fn1.csv") + "\"");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("accuracy 0.5"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("f1 0.5"), std::string::npos) << r.out;
  const auto j = nlohmann::json::parse(cli("metrics --json \"" + fixture("metrics_tp1_tn1_fp1_fn1.csv") + "\"").out);
  EXPECT_EQ(j["accuracy"], 0.5);
  EXPECT_EQ(j["f1"], 0.5);
  EXPECT_EQ(j["tp"], 1);
  EXPECT_EQ(j["auc"], 0.75);
}

TEST(Cli, MetricsBadFile) {
  const auto dir = scratch("badcsv");
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "bad.csv") << "score,label\n0.5,1\n";
  const auto r = cli("metrics \"" + (dir / "bad.csv").string() + "\"");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("truth"), std::string::npos) << r.out;
}

TEST(Cli, UnknownSubcommandFails) {
  EXPECT_NE(cli("frobnicate").status, 0);
  EXPECT_NE(cli("").status, 0);
}

TEST(Cli, SimulateMonitorReport) {
  const auto dir = scratch("sim");
  const auto records = dir / "records";
  auto r = cli("simulate --out \"" + dir.string() + "\" --subjects A,B --registered A --risk step --before 0.2 "
               "--after 0.7 --change-ms 60000 --duration 120 --fps 10 --records \"" + records.string() + "\" --json");
  ASSERT_EQ(r.status, 0) << r.out;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["samples_stored"], 1200);
  EXPECT_EQ(j["verdicts"][1]["verdict"]["direction"], "up");
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(dir / "registry.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "reports" / "A" / "120000.json"));

  const auto mon = dir / "monitor";
  r = cli("monitor --manifest \"" + (dir / "manifest.jsonl").string() + "\" --registry \"" +
          (dir / "registry.json").string() + "\" --out \"" + mon.string() + "\" --seed 42 --no-reports --json");
  ASSERT_EQ(r.status, 0) << r.out;
  j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["samples_stored"], 1200);
  EXPECT_EQ(j["reports_written"], 0);

  r = cli("report --records \"" + records.string() + "\" --samples \"" + (dir / "samples.jsonl").string() +
          "\" --subject A --now-ms 120000 --json");
  ASSERT_EQ(r.status, 0) << r.out;
  j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["level"], "high");
  EXPECT_EQ(j["generator"], "template");

  r = cli("report --records \"" + records.string() + "\" --samples \"" + (dir / "samples.jsonl").string() +
          "\" --subject nobody");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("not_found"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("nobody"), std::string::npos) << r.out;
}

TEST(Cli, MonitorFromConfigFile) {
  const auto dir = scratch("config");
  ASSERT_EQ(cli("simulate --out \"" + dir.string() + "\" --duration 5 --no-reports").status, 0);
  std::ofstream(dir / "config.json") << R"({"manifest": "manifest.jsonl", "registry": "registry.json",
    "output_root": "run2", "window_ms": 1000, "reports": false})";
  const auto r = cli("monitor --config \"" + (dir / "config.json").string() + "\" --json");
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(std::filesystem::exists(dir / "run2" / "samples.jsonl"));
  EXPECT_EQ(nlohmann::json::parse(r.out)["verdicts_emitted"], 10);
}

TEST(Cli, MonitorMissingManifest) {
  const auto r = cli("monitor --manifest /nonexistent.jsonl --registry /nonexistent.json");
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("not found"), std::string::npos) << r.out;
}

TEST(Cli, RegistryCommands) {
  const auto dir = scratch("registry");
  std::filesystem::create_directories(dir);
  const auto path = "\"" + (dir / "r.json").string() + "\"";
  ASSERT_EQ(cli("registry init --path " + path + " --dimension 3").status, 0);
  EXPECT_NE(cli("registry init --path " + path).status, 0);
  ASSERT_EQ(cli("registry add --path " + path + " --label A --embedding 1,0,0").status, 0);
  ASSERT_EQ(cli("registry add --path " + path + " --label A --embedding 0,3,4").status, 0);
  ASSERT_EQ(cli("registry add --path " + path + " --label B --synthetic-seed 7").status, 0);
  EXPECT_NE(cli("registry add --path " + path + " --label C --embedding 1,0").status, 0);
  const auto r = cli("registry list --path " + path + " --json");
  ASSERT_EQ(r.status, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[0]["label"], "A");
  EXPECT_EQ(j[0]["templates"], 2);
}

TEST(Cli, ProfileJson) {
  const auto dir = scratch("profile");
  const auto r = cli("profile --frames 50 --out \"" + dir.string() + "\" --json");
  ASSERT_EQ(r.status, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["stages"].size(), 6u);
  EXPECT_EQ(j["stages"][3]["count"], 45);
  EXPECT_TRUE(std::filesystem::exists(dir / "profile.json"));
}
