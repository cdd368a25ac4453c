#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "otpf/cli.hpp"

namespace otpf {
namespace {

namespace fs = std::filesystem;

struct Result {
  int status;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "otpf");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int status = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {status, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("otpf_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(CliTest, NoArgumentsPrintsUsage) {
  const auto r = invoke({});
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find("scalar-uniform"), std::string::npos);
}

TEST_F(CliTest, BadFlagsAreUsageErrors) {
  EXPECT_EQ(invoke({"scalar-uniform", "--bogus"}).status, 2);
  EXPECT_EQ(invoke({"frobnicate"}).status, 2);
  EXPECT_EQ(invoke({"scalar-uniform", "--M", "abc"}).status, 2);
  EXPECT_EQ(invoke({"scalar-uniform", "--M", "1", "--out-dir", path("o")}).status, 2);
  EXPECT_EQ(invoke({"lorenz-sweep", "--method", "enkf", "--out-dir", path("o")}).status, 2);
}

TEST_F(CliTest, ScalarUniformWritesTableRow) {
  const auto r = invoke({"scalar-uniform", "--M", "100", "--out-dir", path("u")});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto table = slurp(path("u/table2.csv"));
  ASSERT_EQ(table.rfind("M,mean,variance,third_central,fourth_central\n100,", 0), 0u) << table;
  std::istringstream row(table.substr(table.find("\n100,") + 5));
  const std::array<double, 4> expected{0.4836, 0.0825, 0.0016, 0.0122};
  for (const double e : expected) {
    double v = 0.0;
    char sep = 0;
    row >> v;
    row >> sep;
    EXPECT_NEAR(v, e, 5e-4);
  }
  EXPECT_TRUE(fs::exists(path("u/scalar-uniform_config.json")));
}

TEST_F(CliTest, ScalarGaussianWritesFigureData) {
  const auto r = invoke({"scalar-gaussian", "--M", "10,40", "--out-dir", path("g")});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto table = slurp(path("g/table1.csv"));
  EXPECT_NE(table.find("\n40,"), std::string::npos);
  const auto support = slurp(path("g/fig2_support.csv"));
  EXPECT_EQ(std::count(support.begin(), support.end(), '\n'), 1 + 19 + 79);
  const auto map = slurp(path("g/fig1b_map.csv"));
  EXPECT_EQ(map.rfind("M,prior,posterior,analytic\n", 0), 0u);
  EXPECT_EQ(std::count(map.begin(), map.end(), '\n'), 1 + 10 + 40);
}

TEST_F(CliTest, TransportSolveWorkedExample) {
  spit(path("cost.csv"), "0,1\n1,0\n");
  spit(path("row.csv"), "0.75\n0.25\n");
  spit(path("col.csv"), "0.5,0.5\n");
  const auto r = invoke({"transport-solve", "--cost", path("cost.csv"), "--row", path("row.csv"), "--col",
                         path("col.csv"), "--out-dir", path("t")});
  ASSERT_EQ(r.status, 0) << r.err;
  EXPECT_EQ(r.out.rfind("i,j,t\n1,1,0.5\n1,2,0.25\n2,2,0.25\nobjective,0.25,", 0), 0u) << r.out;
  EXPECT_EQ(slurp(path("t/transport.csv")), r.out);
}

TEST_F(CliTest, TransportSolveErrors) {
  spit(path("cost.csv"), "0,1\n1,0\n");
  spit(path("row.csv"), "0.75\n0.35\n");
  spit(path("col.csv"), "0.5,0.5\n");
  spit(path("bad.csv"), "0,x\n1,0\n");
  const std::vector<std::string> base{"--row", path("row.csv"), "--col", path("col.csv"), "--out-dir", path("t")};
  auto with_cost = [&](const std::string& cost) {
    std::vector<std::string> args{"transport-solve", "--cost", cost};
    args.insert(args.end(), base.begin(), base.end());
    return invoke(args).status;
  };
  EXPECT_EQ(with_cost(path("cost.csv")), 1);  // infeasible marginals
  EXPECT_EQ(with_cost(path("bad.csv")), 2);
  EXPECT_EQ(with_cost(path("missing.csv")), 2);
  EXPECT_EQ(invoke({"transport-solve"}).status, 2);
}

TEST_F(CliTest, SameArgumentsGiveIdenticalBytes) {
  ASSERT_EQ(invoke({"scalar-gaussian", "--M", "10", "--out-dir", path("a")}).status, 0);
  ASSERT_EQ(invoke({"scalar-gaussian", "--M", "10", "--out-dir", path("b")}).status, 0);
  for (const char* name : {"table1.csv", "fig1b_map.csv", "fig2_support.csv"})
    EXPECT_EQ(slurp(path(std::string("a/") + name)), slurp(path(std::string("b/") + name))) << name;
}

TEST_F(CliTest, ConfigFileAndOverrides) {
  spit(path("cfg.json"), R"({"M": [5], "steps": 12, "seeds": 1, "spin_up": 5, "inflation_grid": [1.0, 1.1],
                             "method": "ESRF", "threads": 1, "out_dir": ")" + path("s1") + R"("})");
  const auto first = invoke({"lorenz-sweep", "--config", path("cfg.json")});
  ASSERT_EQ(first.status, 0) << first.err;
  const auto sweep = slurp(path("s1/fig3_sweep.csv"));
  EXPECT_EQ(sweep.rfind("method,M,rmse,lambda,diverged,diverged_runs\nESRF,5,", 0), 0u) << sweep;

  // The echoed config reproduces the run when pointed at a new directory.
  const auto echo = path("s1/lorenz-sweep_config.json");
  ASSERT_EQ(invoke({"lorenz-sweep", "--config", echo, "--out-dir", path("s2")}).status, 0);
  EXPECT_EQ(slurp(path("s2/fig3_sweep.csv")), sweep);
  const auto echoed = nlohmann::json::parse(slurp(echo));
  EXPECT_EQ(echoed.at("steps"), 12);
  EXPECT_EQ(echoed.at("method"), "ESRF");

  // Flags win over the file.
  ASSERT_EQ(invoke({"lorenz-sweep", "--config", path("cfg.json"), "--M", "6", "--out-dir", path("s3")}).status, 0);
  EXPECT_NE(slurp(path("s3/fig3_sweep.csv")).find("ESRF,6,"), std::string::npos);
}

TEST_F(CliTest, ConfigFileRejectsUnknownKeysAndBadTypes) {
  spit(path("unknown.json"), R"({"M": [10], "colour": "blue"})");
  spit(path("typed.json"), R"({"M": "ten"})");
  spit(path("broken.json"), R"({"M": [10)");
  spit(path("other.json"), R"({"command": "lorenz-sweep"})");
  for (const char* name : {"unknown.json", "typed.json", "broken.json", "other.json", "absent.json"})
    EXPECT_EQ(invoke({"scalar-uniform", "--config", path(name), "--out-dir", path("x")}).status, 2) << name;
}

TEST_F(CliTest, DefaultsTableCoversEveryCommand) {
  for (const char* cmd : {"scalar-gaussian", "scalar-uniform", "lorenz-sweep", "transport-solve"})
    EXPECT_TRUE(cli::defaults(cmd).contains("out_dir")) << cmd;
  const auto sweep = cli::defaults("lorenz-sweep");
  EXPECT_EQ(sweep.at("steps"), 500);
  EXPECT_EQ(sweep.at("inflation_grid").size(), 8u);
  EXPECT_THROW(cli::defaults("nope"), cli::UsageError);
}

}  // namespace
}  // namespace otpf
