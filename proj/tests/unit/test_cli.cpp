#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "clp/clp.hpp"
#include "clp/eval.hpp"
#include "clp/model_io.hpp"
#include "clp/models.hpp"
#include "fixtures.hpp"

using namespace clp;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("clp_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  // A small trained model file; cheap enough for unit tests.
  std::string small_attack(const std::string& name, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"attack", "--classes", "3", "--per-class", "20", "--test-per-class", "10",
                                  "--image-size", "8", "--epochs", "2", "--batch-size", "16", "--seed", "3",
                                  "--quiet", "--out", path(name)};
    args.insert(args.end(), extra.begin(), extra.end());
    Result r = run(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return path(name);
  }

  std::vector<std::string> data_flags() const {
    return {"--classes", "3", "--per-class", "20", "--test-per-class", "10", "--image-size", "8"};
  }

  fs::path dir_;
};

std::map<std::string, std::string> read_manifest(const std::string& p) {
  std::map<std::string, std::string> m;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

std::size_t count_lines(const std::string& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  std::string line;
  while (std::getline(in, line)) ++n;
  return n;
}

}  // namespace

TEST_F(CliTest, NoCommandIsUsageError) { EXPECT_EQ(run({}).code, cli::kUsage); }

TEST_F(CliTest, HelpSucceeds) { EXPECT_EQ(run({"--help"}).code, cli::kOk); }

TEST_F(CliTest, MissingOutputPathIsUsageError) {
  EXPECT_EQ(run({"attack", "--epochs", "1"}).code, cli::kUsage);
  EXPECT_EQ(run({"prune", "--model", "nowhere.clpw"}).code, cli::kUsage);
}

TEST_F(CliTest, InvalidCombinationsAreUsageErrors) {
  EXPECT_EQ(run({"attack", "--trigger", "patch", "--alpha", "0.2", "--out", path("m.clpw")}).code, cli::kUsage);
  EXPECT_EQ(run({"attack", "--rule", "a2a", "--target", "3", "--out", path("m.clpw")}).code, cli::kUsage);
  EXPECT_EQ(run({"attack", "--rho", "1.5", "--out", path("m.clpw")}).code, cli::kUsage);
  EXPECT_EQ(run({"attack", "--dataset", "cifar", "--out", path("m.clpw")}).code, cli::kUsage);
  EXPECT_FALSE(fs::exists(path("m.clpw")));
}

TEST_F(CliTest, AttackWritesModelAndManifest) {
  const std::string model = small_attack("bd.clpw", {"--rho", "0.2", "--clean-out", path("clean.clpw")});
  ASSERT_TRUE(fs::exists(model));
  ASSERT_TRUE(fs::exists(path("clean.clpw")));
  auto m = read_manifest(model + ".manifest");
  EXPECT_EQ(m["poisoned_count"], "12");
  EXPECT_EQ(m["seed"], "3");
  EXPECT_EQ(m["poison_seed"], "3");  // follows --seed unless given
  EXPECT_EQ(m["trigger"], "patch");
  EXPECT_TRUE(m.count("acc") && m.count("asr") && m.count("clean_acc"));
}

TEST_F(CliTest, ExplicitPoisonSeedOverridesSeed) {
  const std::string model = small_attack("ps.clpw", {"--poison-seed", "11"});
  EXPECT_EQ(read_manifest(model + ".manifest")["poison_seed"], "11");
}

TEST_F(CliTest, AttackIsReproducibleByteForByte) {
  const std::string a = small_attack("a.clpw");
  const std::string b = small_attack("b.clpw");
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_EQ(sa, sb);
}

TEST_F(CliTest, PruneWithHugeUKeepsEveryChannel) {
  const std::string model = path("init.clpw");
  ASSERT_EQ(run({"init", "--input", "3", "8", "8", "--classes", "3", "--out", model}).code, 0);
  Result r = run({"prune", "--model", model, "--u", "1000000", "--out", path("p.clpw"), "--report", path("r.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("pruned 0 of 176 channels"), std::string::npos) << r.out;
  EXPECT_EQ(count_lines(path("r.csv")), 177u);
  ModelGraph fused = fuse_conv_bn(load_model(model));
  EXPECT_EQ(load_model(path("p.clpw")), fused);
}

TEST_F(CliTest, CorruptModelIsFormatExit) {
  {
    std::ofstream f(path("bad.clpw"), std::ios::binary);
    f << "CLPWgarbage";
  }
  EXPECT_EQ(run({"prune", "--model", path("bad.clpw"), "--out", path("p.clpw")}).code, cli::kData);
}

TEST_F(CliTest, NonFiniteWeightsAreNumericalExit) {
  ModelGraph m = make_tinynet({3, 8, 8}, 3, 1);
  m.mutable_layer(0).as<Conv>().weight[0] = NAN;
  save_model(m, path("nan.clpw"));
  EXPECT_EQ(run({"prune", "--model", path("nan.clpw"), "--out", path("p.clpw")}).code, cli::kNumerical);
}

TEST_F(CliTest, EvalMatchesAccuracyExactly) {
  const std::string model = small_attack("m.clpw");
  auto args = data_flags();
  args.insert(args.begin(), {"eval", "--model", model, "--log", path("log.csv")});
  Result r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const Dataset test = make_synthetic_dataset(3, 10, 8, 2, Split::Test);
  const EvalReport expected = evaluate(load_model(model), test, make_patch_spec({3, 8, 8}));
  EXPECT_EQ(r.out, expected.to_json() + "\n");
  run(args);
  EXPECT_EQ(count_lines(path("log.csv")), 3u);
}

TEST_F(CliTest, AnalyzeCommandsWriteReports) {
  const std::string model = small_attack("m.clpw");
  auto with = [&](std::vector<std::string> head) {
    auto flags = data_flags();
    head.insert(head.end(), flags.begin(), flags.end());
    return head;
  };
  Result sweep = run(with({"analyze", "sweep", "--model", model, "--u-values", "1,2,3", "--out", path("s.csv")}));
  ASSERT_EQ(sweep.code, 0) << sweep.err;
  EXPECT_EQ(count_lines(path("s.csv")), 4u);
  Result tac = run(with({"analyze", "tac", "--model", model, "--out", path("t.csv")}));
  ASSERT_EQ(tac.code, 0) << tac.err;
  EXPECT_EQ(count_lines(path("t.csv")), 177u);
  Result corr = run(with({"analyze", "correlation", "--model", model, "--out", path("c.csv"), "--summary", path("r.csv")}));
  ASSERT_EQ(corr.code, 0) << corr.err;
  EXPECT_EQ(count_lines(path("c.csv")), 177u);
  EXPECT_EQ(count_lines(path("r.csv")), 6u);
  EXPECT_EQ(run(with({"analyze", "sweep", "--model", model, "--u-values", "1,x", "--out", path("s.csv")})).code,
            cli::kUsage);
}

TEST_F(CliTest, InitResnet18) {
  Result r = run({"init", "--arch", "resnet18", "--out", path("r18.clpw")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_model(path("r18.clpw")).parameter_count(), 11178762u);
}
