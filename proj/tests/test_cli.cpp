#include "netsym/checkpoint.hpp"
#include "netsym/cli.hpp"
#include "netsym/dataset.hpp"
#include "netsym/task.hpp"

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace netsym;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult cli(std::vector<std::string> args) {
  args.push_back("--log-level");
  args.push_back("error");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  return lines;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

// One small toy pipeline shared by every test in the suite.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "netsym_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    const CliResult r = cli({"--seed", "1", "pipeline-toy", "--out", (root / "toy").string(), "--count", "6"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root); }

  static fs::path toy(const std::string& rel) { return root / "toy" / rel; }
  static std::string path(const std::string& rel) { return (root / rel).string(); }

  static fs::path root;
};

fs::path Cli::root;

}  // namespace

TEST_F(Cli, PipelineStagesAndStamps) {
  const json summary = read_json_file(toy("pipeline.json"));
  ASSERT_EQ(summary["stages"].size(), 5u);
  for (const auto& s : summary["stages"]) EXPECT_EQ(s["status"], "ok") << s.dump();
  for (const char* f : {"stamp.json", "data.csv.stamp.json", "ensemble/stamp.json", "ensemble/manifest.json",
                        "marginals/ks.csv", "marginals/raw_hist.csv", "marginals/canonical_values.csv",
                        "marginals/normalized_values.csv", "symmetries.csv.stamp.json", "minmass/masses.csv",
                        "minmass/masses.csv.stamp.json"})
    EXPECT_TRUE(fs::exists(toy(f))) << f;
  const json stamp = read_json_file(toy("ensemble/stamp.json"));
  EXPECT_EQ(stamp["tool"], "netsym");
  EXPECT_EQ(stamp["version"], kVersion);
  EXPECT_EQ(stamp["command"], "train-ensemble");
  EXPECT_EQ(stamp["seeds"]["global"], 1);
  EXPECT_EQ(stamp["seeds"]["last_checkpoint"], 6);
  EXPECT_EQ(stamp["config_hash"].get<std::string>().size(), 16u);
  EXPECT_EQ(open_dataset(toy("ensemble").string()).entries.size(), 6u);
}

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, kExitUsage);
  EXPECT_EQ(cli({"no-such-command"}).code, kExitUsage);
  EXPECT_EQ(cli({"count-symmetries"}).code, kExitUsage);
  EXPECT_EQ(cli({"count-symmetries", "--spec", toy("spec.json").string(), "--bogus"}).code, kExitUsage);
  EXPECT_EQ(cli({"--threads", "0", "count-symmetries", "--spec", toy("spec.json").string()}).code, kExitUsage);
  EXPECT_EQ(cli({"--version"}).code, kExitOk);
}

TEST_F(Cli, DataErrorsExitThree) {
  EXPECT_EQ(cli({"count-symmetries", "--spec", path("missing.json")}).code, kExitData);
  write_text(root / "garbage.nnck", "not a checkpoint");
  EXPECT_EQ(cli({"verify-equivalence", "--a", path("garbage.nnck"), "--b", path("garbage.nnck")}).code, kExitData);
  const CliResult bad_layer = cli({"marginals", "--checkpoints", toy("ensemble").string(), "--layer", "layers.9.weight",
                             "--out", path("bad_marginals")});
  EXPECT_EQ(bad_layer.code, kExitData);
  EXPECT_NE(bad_layer.err.find("layers.1.weight"), std::string::npos) << bad_layer.err;
}

TEST_F(Cli, NumericalFailuresExitFour) {
  const std::string a = toy("ensemble/ckpt_00000.nnck").string(), b = toy("ensemble/ckpt_00001.nnck").string();
  EXPECT_EQ(cli({"verify-equivalence", "--a", a, "--b", b}).code, kExitNumerical);

  Network dead = load_checkpoint(a);
  dead.layers[1].weight.setZero();
  save_checkpoint(dead, path("dead.nnck"));
  EXPECT_EQ(cli({"minmass", "--in", path("dead.nnck"), "--out", path("dead_mm")}).code, kExitNumerical);
  const auto rows = lines_of(root / "dead_mm" / "masses.csv");
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_NE(rows[1].find("degenerate"), std::string::npos) << rows[1];

  EXPECT_EQ(cli({"equivariance-check", "--spec", toy("spec.json").string(), "--data", toy("data.csv").string(),
                 "--epochs", "2", "--second-seed", "77"}).code,
            kExitNumerical);
}

TEST_F(Cli, GenDataAndTrain) {
  ASSERT_EQ(cli({"--seed", "4", "gen-data", "--n", "20", "--out", path("d.csv")}).code, 0);
  const Dataset d = load_dataset(path("d.csv"));
  EXPECT_EQ(d.size(), 40);
  ASSERT_EQ(cli({"gen-data", "--task", "grid", "--grid-steps", "4", "--out", path("grid.csv")}).code, 0);
  const Dataset g = load_dataset(path("grid.csv"));
  EXPECT_EQ(g.size(), 16);
  EXPECT_EQ(g.labels.size(), 0);

  const CliResult t = cli({"train", "--spec", toy("spec.json").string(), "--data", path("d.csv"), "--out", path("t.nnck")});
  ASSERT_EQ(t.code, 0) << t.err;
  json meta;
  load_checkpoint(path("t.nnck"), &meta);
  EXPECT_TRUE(meta.contains("final_loss"));
  EXPECT_EQ(meta["train_config"]["epochs"], 10);
  EXPECT_TRUE(fs::exists(path("t.nnck.stamp.json")));
}

TEST_F(Cli, CanonicalizeThenVerify) {
  const CliResult c = cli({"canonicalize", "--in", toy("ensemble").string(), "--out", path("canon"), "--key", "max_abs"});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_TRUE(fs::exists(root / "canon" / "manifest.json"));
  EXPECT_TRUE(fs::exists(root / "canon" / "stamp.json"));
  json meta;
  load_checkpoint(path("canon/ckpt_00002.nnck"), &meta);
  EXPECT_EQ(meta["canonicalization"]["config"]["key"], "max_abs");
  EXPECT_TRUE(meta["canonicalization"].contains("scales"));
  const CliResult v = cli({"verify-equivalence", "--a", toy("ensemble/ckpt_00002.nnck").string(), "--b",
                     path("canon/ckpt_00002.nnck"), "--out", path("verify.json")});
  EXPECT_EQ(v.code, 0) << v.out;
  EXPECT_TRUE(read_json_file(root / "verify.json")["equivalent"].get<bool>());
}

TEST_F(Cli, CountSymmetriesCsv) {
  ASSERT_EQ(cli({"count-symmetries", "--spec", toy("spec.json").string(), "--out", path("sym.csv")}).code, 0);
  const auto rows = lines_of(root / "sym.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "interface,units,sdof,log_permutations");
  EXPECT_EQ(rows[2].rfind("total,", 0), 0u);
}

TEST_F(Cli, MinmassReport) {
  const auto rows = lines_of(toy("minmass/masses.csv"));
  ASSERT_EQ(rows.size(), 7u);
  EXPECT_EQ(rows[0].rfind("file,mass_before,mass_after,iterations,converged", 0), 0u);
  EXPECT_TRUE(fs::exists(toy("minmass/ckpt_00000.nnck")));
}

TEST_F(Cli, MmdWithPermutationTest) {
  const CliResult r = cli({"mmd", "--a", toy("ensemble").string(), "--b", toy("ensemble").string(), "--canonicalize",
                     "--permutations", "10", "--out", path("mmd.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json report = read_json_file(root / "mmd.json");
  EXPECT_EQ(report["layers"].size(), 2u);
  EXPECT_TRUE(report.contains("permutation_test"));
  EXPECT_TRUE(fs::exists(path("mmd.json.stamp.json")));
}

TEST_F(Cli, MetricsFromPredictionFiles) {
  write_text(root / "m0.csv", "p0,p1\n1,0\n0,1\n0.5,0.5\n");
  write_text(root / "m1.csv", "p0,p1\n0,1\n0,1\n0.5,0.5\n");
  write_text(root / "labels.csv", "label\n0\n1\n0\n");
  const CliResult r = cli({"metrics", "--preds", path("m0.csv") + "," + path("m1.csv"), "--labels", path("labels.csv"),
                     "--ood-preds", path("m0.csv") + "," + path("m1.csv"), "--out", path("metrics.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json m = read_json_file(root / "metrics.json");
  // mean rows [0.5,0.5], [0,1], [0.5,0.5]: argmax ties go to class 0
  EXPECT_DOUBLE_EQ(m["Acc"].get<double>(), 1.0);
  EXPECT_NEAR(m["IDMI"].get<double>(), std::log(2.0) / 3.0, 1e-12);
  EXPECT_EQ(m["ood_score"], "mutual_information");
  for (const char* k : {"ECE", "Brier", "AUPR", "FPR95", "OODMI"}) EXPECT_TRUE(m.contains(k)) << k;

  const CliResult c = cli({"metrics", "--checkpoints", toy("ensemble").string(), "--data", toy("data.csv").string()});
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_GT(json::parse(c.out)["Acc"].get<double>(), 0.9);
}

TEST_F(Cli, CollapseWritesPairsAndSummary) {
  ASSERT_EQ(cli({"gen-data", "--task", "grid", "--grid-steps", "5", "--out", path("cgrid.csv")}).code, 0);
  const CliResult r = cli({"collapse", "--checkpoints", toy("ensemble").string(), "--id", path("cgrid.csv"), "--pairs",
                     "10", "--out", path("pairs.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines_of(root / "pairs.csv");
  EXPECT_EQ(rows[0], "i,j,id_mi,ood_mi");
  EXPECT_EQ(rows.size(), 11u);
  const json s = read_json_file(root / "pairs_summary.json");
  EXPECT_TRUE(s.contains("rho"));
  EXPECT_TRUE(s.contains("p_value"));
}

TEST_F(Cli, TrackPermutationsCsv) {
  const CliResult r = cli({"track-permutations", "--spec", toy("spec.json").string(), "--data", toy("data.csv").string(),
                     "--epochs", "2", "--out", path("tau.csv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines_of(root / "tau.csv");
  EXPECT_EQ(rows[0], "step,epoch,mean_tau,tau_0");
  EXPECT_EQ(rows.size(), 81u);  // 2 epochs x 40 steps
  EXPECT_TRUE(fs::exists(root / "tau_summary.json"));
}

TEST_F(Cli, EquivarianceCheckPasses) {
  const CliResult r = cli({"--seed", "3", "equivariance-check", "--spec", toy("spec.json").string(), "--data",
                     toy("data.csv").string(), "--out", path("eqv.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = read_json_file(root / "eqv.json");
  EXPECT_TRUE(j["pass"].get<bool>());
  EXPECT_EQ(j["perm"][0], json::array({1, 0}));
}

TEST_F(Cli, MarginalsOutputs) {
  const CliResult r = cli({"marginals", "--checkpoints", toy("ensemble").string(), "--coords", "0,1", "--bins", "5",
                     "--out", path("marg")});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* v : {"raw", "normalized", "canonical"}) {
    EXPECT_TRUE(fs::exists(root / "marg" / (std::string(v) + "_values.csv"))) << v;
    EXPECT_TRUE(fs::exists(root / "marg" / (std::string(v) + "_hist.csv"))) << v;
  }
  EXPECT_TRUE(fs::exists(root / "marg" / "ks.csv"));
  EXPECT_TRUE(fs::exists(root / "marg" / "marginals.json"));
}

TEST_F(Cli, ConfigMergeExplicitFlagsWin) {
  write_text(root / "cfg.json", R"({"seed": 5, "n": 3, "epochs": 99, "gen-data": {"task": "two-gaussians"}})");
  ASSERT_EQ(cli({"--config", path("cfg.json"), "gen-data", "--out", path("cfg_a.csv")}).code, 0);
  EXPECT_EQ(load_dataset(path("cfg_a.csv")).size(), 6);
  EXPECT_EQ(read_json_file(root / "cfg_a.csv.stamp.json")["seeds"]["global"], 5);

  ASSERT_EQ(cli({"--config", path("cfg.json"), "--seed", "9", "gen-data", "--n", "4", "--out", path("cfg_b.csv")}).code, 0);
  EXPECT_EQ(load_dataset(path("cfg_b.csv")).size(), 8);
  EXPECT_EQ(read_json_file(root / "cfg_b.csv.stamp.json")["seeds"]["global"], 9);

  // keys the command does not know are ignored at top level
  EXPECT_EQ(cli({"--config", path("cfg.json"), "count-symmetries", "--spec", toy("spec.json").string()}).code, 0);
  write_text(root / "cfg_bad.json", R"({"count-symmetries": {"epochs": 3}})");
  EXPECT_EQ(cli({"--config", path("cfg_bad.json"), "count-symmetries", "--spec", toy("spec.json").string()}).code,
            kExitUsage);
  EXPECT_EQ(cli({"--config", path("missing_cfg.json"), "count-symmetries", "--spec", toy("spec.json").string()}).code,
            kExitUsage);
}

TEST_F(Cli, SeedFallsBackToEnvironment) {
  ::setenv("NETSYM_SEED", "42", 1);
  const int a = cli({"gen-data", "--n", "5", "--out", path("env_a.csv")}).code;
  const int b = cli({"--seed", "7", "gen-data", "--n", "5", "--out", path("env_b.csv")}).code;
  ::setenv("NETSYM_SEED", "x1", 1);
  const int bad = cli({"gen-data", "--n", "5", "--out", path("env_c.csv")}).code;
  ::unsetenv("NETSYM_SEED");
  ASSERT_EQ(a, 0);
  ASSERT_EQ(b, 0);
  EXPECT_EQ(bad, kExitUsage);
  EXPECT_EQ(read_json_file(root / "env_a.csv.stamp.json")["seeds"]["global"], 42);
  EXPECT_EQ(read_json_file(root / "env_b.csv.stamp.json")["seeds"]["global"], 7);
  EXPECT_EQ(load_dataset(path("env_a.csv")).inputs, gen_task(SyntheticTask::two_gaussians(42, 5)).inputs);
}

TEST_F(Cli, StampHashTracksArguments) {
  ASSERT_EQ(cli({"gen-data", "--n", "5", "--out", path("h1.csv")}).code, 0);
  ASSERT_EQ(cli({"gen-data", "--n", "5", "--out", path("h1.csv")}).code, 0);
  const std::string first = read_json_file(root / "h1.csv.stamp.json")["config_hash"];
  ASSERT_EQ(cli({"gen-data", "--n", "5", "--out", path("h1.csv")}).code, 0);
  EXPECT_EQ(read_json_file(root / "h1.csv.stamp.json")["config_hash"], first);
  ASSERT_EQ(cli({"gen-data", "--n", "6", "--out", path("h1.csv")}).code, 0);
  EXPECT_NE(read_json_file(root / "h1.csv.stamp.json")["config_hash"], first);
}

TEST_F(Cli, BinaryRunsStandalone) {
  const std::string cmd = std::string(NETSYM_CLI_PATH) + " --version > " + path("version.txt");
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_EQ(lines_of(root / "version.txt").at(0), kVersion);
}
