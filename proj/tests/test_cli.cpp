#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tcprune/accounting.hpp"
#include "tcprune/checkpoint.hpp"
#include "tcprune/cli.hpp"
#include "tcprune/data.hpp"
#include "tcprune/runcfg.hpp"

using namespace tcprune;
namespace fs = std::filesystem;

namespace {

int cli(const std::vector<std::string>& args) {
  std::vector<std::string> owned;
  owned.reserve(args.size() + 1);
  owned.push_back("tcprune");
  owned.insert(owned.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  argv.reserve(owned.size());
  for (const auto& s : owned) argv.push_back(s.c_str());
  return dispatch(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), "cannot open " << path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

std::string fresh_dir(const std::string& name) {
  const std::string dir = "/tmp/tcprune_test_cli/" + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

}  // namespace

TEST_CASE("usage problems exit with 2") {
  const std::string d = fresh_dir("usage");
  CHECK(cli({}) == 2);                                   // no subcommand
  CHECK(cli({"frobnicate"}) == 2);                       // unknown subcommand
  CHECK(cli({"gen-data"}) == 2);                         // missing required --out
  CHECK(cli({"prune", "--out", d, "--no-such-flag"}) == 2);
  CHECK(cli({"--help"}) == 0);                           // help is a success
  CHECK(cli({"gen-data", "--help"}) == 0);
}

TEST_CASE("configuration problems exit with 3") {
  const std::string d = fresh_dir("cfg");
  CHECK(cli({"gen-data", "--out", d, "--classes", "1"}) == 3);
  CHECK(cli({"gen-data", "--out", d, "--shift-contrast", "0"}) == 3);
  CHECK(cli({"prune", "--out", d, "--arch", "toy"}) == 3);  // no data anywhere
  CHECK(cli({"prune", "--out", d, "--data", "gen:classes=3,height=8,width=8"}) == 3);
  CHECK(cli({"prune", "--out", d, "--data", "gen:classes=3,height=8,width=8", "--arch", "toy",
             "--method", "banana"}) == 3);
  CHECK(cli({"train-base", "--out", d, "--data", "gen:classes=3,height=8,width=8",
             "--arch", "toy", "--mmd", "banana"}) == 3);
  CHECK(cli({"eval", "--out", d, "--data", "gen:classes=3,height=8,width=8"}) == 3);
  CHECK(cli({"report", "--out", d}) == 3);

  // Malformed inline generator specs.
  CHECK(cli({"train-base", "--out", d, "--data", "gen:classes", "--arch", "toy"}) == 3);
  CHECK(cli({"train-base", "--out", d, "--data", "gen:bogus=1", "--arch", "toy"}) == 3);

  // A config file with a key the subcommand does not know.
  const std::string cfg = d + "/bad.cfg";
  write_text(cfg, "classes = 3\nnonsense = 1\n");
  CHECK(cli({"gen-data", "--out", d, "--config", cfg}) == 3);
}

TEST_CASE("runtime problems exit with 1") {
  const std::string d = fresh_dir("runtime");
  CHECK(cli({"train-base", "--out", d, "--data", "/tmp/tcprune_no_such_data_dir",
             "--arch", "toy"}) == 1);
  CHECK(cli({"eval", "--out", d, "--data", "gen:classes=3,height=8,width=8",
             "--ckpt", d + "/missing.ckpt"}) == 1);
}

TEST_CASE("generate, train, prune, eval, report round trip") {
  const std::string root = fresh_dir("pipeline");
  const std::string data = root + "/data", train = root + "/train", pr = root + "/prune",
                    ev = root + "/eval", rep = root + "/report";

  CHECK(cli({"gen-data", "--out", data, "--classes", "3", "--n-source", "48", "--n-target",
             "48", "--height", "8", "--width", "8", "--seed", "9", "--shift-brightness",
             "0.1"}) == 0);
  for (const char* f : {"source.tcpt", "source.labels", "target.tcpt", "target.labels",
                        "manifest.txt"})
    CHECK(fs::exists(data + "/" + std::string(f)));

  CHECK(cli({"train-base", "--out", train, "--data", data, "--arch", "toy", "--base-epochs",
             "2", "--batch", "16", "--mmd", "fixed:2", "--seed", "7"}) == 0);
  CHECK(fs::exists(train + "/base.ckpt"));
  CHECK(fs::exists(train + "/base.ckpt.graph"));
  CHECK(count_lines(slurp(train + "/train_log.csv")) == 3);  // header + 2 epochs

  CHECK(cli({"prune", "--out", pr, "--data", data, "--base", train + "/base.ckpt", "--k", "2",
             "--iters", "2", "--flops-target", "0.5", "--short-ft", "1", "--long-ft", "1",
             "--batch", "16", "--mmd", "fixed:2", "--seed", "7"}) == 0);
  PruneReport from_csv = read_report_csv(pr + "/report.csv");
  REQUIRE(!from_csv.rows.empty());
  // Metadata lives in the JSON; the merged view stitches the CSV rows back in.
  CHECK(read_report_json(pr + "/report.json").method == "tcp");
  PruneReport merged_rep = load_run_report(pr);
  CHECK(merged_rep.method == "tcp");
  CHECK(merged_rep.rows.size() == from_csv.rows.size());
  Checkpoint final_ck = load_checkpoint(pr + "/final.ckpt");
  CHECK(count_flops(final_ck.graph) == from_csv.rows.back().flops);

  CHECK(cli({"eval", "--out", ev, "--data", data, "--ckpt", pr + "/final.ckpt"}) == 0);
  const std::string eval_txt = slurp(ev + "/eval.txt");
  CHECK(eval_txt.find("target_acc = ") != std::string::npos);
  CHECK(eval_txt.find("source_acc = ") != std::string::npos);
  CHECK(eval_txt.find("flops = " + std::to_string(count_flops(final_ck.graph))) !=
        std::string::npos);
  CHECK(eval_txt.find("params = ") != std::string::npos);

  CHECK(cli({"report", "--out", rep, "--runs", pr}) == 0);
  const std::string merged = slurp(rep + "/merged.csv");
  CHECK(merged.rfind("method,seed,iteration,flops,flops_down,params,params_down,target_acc,"
                     "beta,removed_json\n", 0) == 0);
  CHECK(count_lines(merged) == 1 + static_cast<int>(from_csv.rows.size()));
  CHECK(fs::exists(rep + "/summary.csv"));
  CHECK(fs::exists(rep + "/plot_curve.csv"));
  CHECK(fs::exists(rep + "/plot_channels.csv"));
}

TEST_CASE("flags override config files, which override defaults") {
  const std::string root = fresh_dir("precedence");
  const std::string cfg = root + "/gen.cfg";
  write_text(cfg, "classes = 4\nheight = 8\nwidth = 8\nn_source = 24\nn_target = 24\n");

  const std::string d1 = root + "/file_only";
  CHECK(cli({"gen-data", "--out", d1, "--config", cfg}) == 0);
  RunManifest m1 = RunManifest::read(d1 + "/manifest.txt");
  CHECK(m1.config.at("classes") == "4");     // from the file
  CHECK(m1.config.at("channels") == "1");    // untouched default

  const std::string d2 = root + "/flag_wins";
  CHECK(cli({"gen-data", "--out", d2, "--config", cfg, "--classes", "3"}) == 0);
  RunManifest m2 = RunManifest::read(d2 + "/manifest.txt");
  CHECK(m2.config.at("classes") == "3");
  CHECK(m2.config.at("height") == "8");      // the rest still comes from the file

  std::vector<std::int32_t> labels = load_labels(d2 + "/source.labels");
  for (std::int32_t y : labels) CHECK(y < 3);
}

TEST_CASE("a run manifest re-executes to byte-identical reports") {
  const std::string root = fresh_dir("manifest_rerun");
  const std::string data = root + "/data", train = root + "/train";
  REQUIRE(cli({"gen-data", "--out", data, "--classes", "3", "--n-source", "48", "--n-target",
               "48", "--height", "8", "--width", "8", "--seed", "5"}) == 0);
  REQUIRE(cli({"train-base", "--out", train, "--data", data, "--arch", "toy", "--base-epochs",
               "1", "--batch", "16", "--mmd", "fixed:2", "--seed", "5"}) == 0);

  const std::string r1 = root + "/run1", r2 = root + "/run2";
  REQUIRE(cli({"prune", "--out", r1, "--data", data, "--base", train + "/base.ckpt", "--k",
               "2", "--iters", "2", "--flops-target", "0.5", "--short-ft", "1", "--long-ft",
               "0", "--batch", "16", "--mmd", "fixed:2", "--seed", "5"}) == 0);
  REQUIRE(cli({"prune", "--config", r1 + "/manifest.txt", "--out", r2}) == 0);

  CHECK(slurp(r1 + "/report.csv") == slurp(r2 + "/report.csv"));
  CHECK(slurp(r1 + "/report.json") == slurp(r2 + "/report.json"));
  CHECK(slurp(r1 + "/final.ckpt") == slurp(r2 + "/final.ckpt"));
}

TEST_CASE("compare fans out per method and seed, then merges") {
  const std::string root = fresh_dir("compare");
  const std::string data = root + "/data", out = root + "/cmp";
  REQUIRE(cli({"gen-data", "--out", data, "--classes", "3", "--n-source", "32", "--n-target",
               "32", "--height", "8", "--width", "8", "--seed", "2"}) == 0);
  REQUIRE(cli({"compare", "--out", out, "--data", data, "--arch", "toy", "--seeds", "1,2",
               "--base-epochs", "1", "--k", "2", "--iters", "1", "--short-ft", "0",
               "--long-ft", "0", "--batch", "16", "--mmd", "fixed:2"}) == 0);

  const char* methods[] = {"tcp", "tcp_no_da", "two_stage", "random"};
  for (const char* m : methods)
    for (const char* s : {"1", "2"}) {
      const std::string rd = out + "/" + m + "_seed" + s;
      CHECK(fs::exists(rd + "/report.csv"));
      CHECK(fs::exists(rd + "/report.json"));
      CHECK(fs::exists(rd + "/manifest.txt"));
      CHECK(read_report_csv(rd + "/report.csv").rows.size() == 1);
    }
  CHECK(fs::exists(out + "/base_seed1.ckpt"));
  CHECK(fs::exists(out + "/base_seed2.ckpt"));

  CHECK(count_lines(slurp(out + "/merged.csv")) == 1 + 8);   // 4 methods x 2 seeds x 1 row
  CHECK(count_lines(slurp(out + "/summary.csv")) == 1 + 4);  // one row per method
  // Curve plots carry a baseline point per run plus one row per iteration.
  CHECK(count_lines(slurp(out + "/plot_curve.csv")) == 1 + 8 * 2);

  // Every child manifest is independently re-runnable and lands on the same
  // bytes the parent run produced.
  const std::string redo = root + "/redo";
  REQUIRE(cli({"prune", "--config", out + "/tcp_seed1/manifest.txt", "--out", redo}) == 0);
  CHECK(slurp(redo + "/report.csv") == slurp(out + "/tcp_seed1/report.csv"));
}
