#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;

namespace {

// The CLI suite shells out to the installed binary; ctest passes its
// location through the environment.
std::string binary_path() {
  const char* bin = std::getenv("MUSCLE_BIN");
  REQUIRE_MESSAGE(bin != nullptr, "MUSCLE_BIN must point at the muscle binary");
  return bin;
}

std::string fresh_dir(const std::string& name) {
  const std::string dir = "cli_scratch/" + name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  REQUIRE(static_cast<bool>(f));
}

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

// `env_prefix` lets a test set variables for the child only ("K=V ").
CliResult run_cli(const std::string& args, const std::string& scratch,
                  const std::string& env_prefix = "") {
  const std::string out_path = scratch + "/stdout.txt";
  const std::string err_path = scratch + "/stderr.txt";
  const std::string cmd = env_prefix + "\"" + binary_path() + "\" " + args + " > " + out_path +
                          " 2> " + err_path;
  const int status = std::system(cmd.c_str());
  REQUIRE(status >= 0);
  CliResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cols;
  std::stringstream ss(line);
  std::string part;
  while (std::getline(ss, part, ',')) cols.push_back(part);
  return cols;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  REQUIRE_MESSAGE(fs::exists(path), path);
  std::ifstream f(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) rows.push_back(split_line(line));
  return rows;
}

// A two-class blob problem small enough that every command finishes in
// well under a second.
std::string tiny_config(const std::string& method) {
  return std::string("{\n"
                     "  \"method\": \"") +
         method +
         "\",\n"
         "  \"seeds\": [1],\n"
         "  \"labels_per_class\": 4,\n"
         "  \"dataset\": {\"classes\": 3, \"n\": 120, \"test_n\": 60, \"noise\": 0.5},\n"
         "  \"model\": {\"hidden\": [8]},\n"
         "  \"train\": {\"epochs\": 2, \"batches_per_epoch\": 2,\n"
         "            \"labeled_per_batch\": 6, \"top_k\": 2}\n"
         "}\n";
}

}  // namespace

TEST_CASE("train command writes metrics, checkpoint, summary, and snapshot") {
  const std::string dir = fresh_dir("train_ok");
  write_file(dir + "/exp.json", tiny_config("supervised"));

  const CliResult r = run_cli("train --config " + dir + "/exp.json --seeds 1,2 --out " + dir +
                                  "/run",
                              dir);
  CAPTURE(r.err);
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("supervised") != std::string::npos);
  CHECK(r.out.find(dir + "/run") != std::string::npos);

  for (const char* name : {"config.json", "metrics_seed1.csv", "metrics_seed2.csv",
                           "checkpoint_seed1.bin", "checkpoint_seed2.bin", "summary.csv",
                           "timing.csv"})
    CHECK_MESSAGE(fs::exists(dir + "/run/" + name), name);

  // Per-seed metrics files carry one header plus one row per epoch.
  const auto metrics = read_csv(dir + "/run/metrics_seed1.csv");
  REQUIRE(metrics.size() == 3);
  CHECK(metrics[0][0] == "epoch");

  // summary.csv: one row per seed plus aggregate mean and std rows.
  const auto summary = read_csv(dir + "/run/summary.csv");
  REQUIRE(summary.size() == 5);
  CHECK(summary[0][0] == "method");
  CHECK(summary[1][2] == "1");
  CHECK(summary[2][2] == "2");
  CHECK(summary[3][2] == "mean");
  CHECK(summary[4][2] == "std");

  SUBCASE("output root falls back to the environment when nothing names it") {
    const std::string env_dir = fresh_dir("train_envroot");
    write_file(env_dir + "/exp.json", tiny_config("supervised"));
    const CliResult e = run_cli("train --config " + env_dir + "/exp.json", env_dir,
                                "MUSCLE_OUT_ROOT=" + env_dir + "/root ");
    CAPTURE(e.err);
    CHECK(e.exit_code == 0);
    // Directory name comes from the config file's stem under the root.
    CHECK(fs::exists(env_dir + "/root/exp/summary.csv"));
  }
}

TEST_CASE("unknown configuration keys are refused by name with exit code 2") {
  const std::string dir = fresh_dir("bad_keys");

  SUBCASE("misspelled section in the file") {
    write_file(dir + "/exp.json", "{\"trian\": {\"epochs\": 1}}");
    const CliResult r = run_cli("train --config " + dir + "/exp.json --out " + dir + "/run", dir);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("unknown key: trian") != std::string::npos);
  }

  SUBCASE("misspelled override path") {
    write_file(dir + "/exp.json", tiny_config("supervised"));
    const CliResult r = run_cli("train --config " + dir + "/exp.json --set loss.gamma=1 --out " +
                                    dir + "/run",
                                dir);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("unknown key: loss.gamma") != std::string::npos);
  }

  SUBCASE("override missing the equals sign") {
    write_file(dir + "/exp.json", tiny_config("supervised"));
    const CliResult r = run_cli("train --config " + dir + "/exp.json --set loss.alpha --out " +
                                    dir + "/run",
                                dir);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("key=value") != std::string::npos);
  }

  SUBCASE("whole sections cannot be overridden") {
    write_file(dir + "/exp.json", tiny_config("supervised"));
    const CliResult r = run_cli("train --config " + dir + "/exp.json --set loss=3 --out " + dir +
                                    "/run",
                                dir);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("whole section") != std::string::npos);
  }

  SUBCASE("invalid config values fail validation, not a crash") {
    write_file(dir + "/exp.json", tiny_config("supervised"));
    const CliResult r = run_cli("train --config " + dir + "/exp.json --set train.momentum=2 "
                                "--out " + dir + "/run",
                                dir);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("momentum") != std::string::npos);
  }
}

TEST_CASE("config snapshot records command-line overrides") {
  const std::string dir = fresh_dir("snapshot");
  write_file(dir + "/exp.json", tiny_config("muscle"));

  const CliResult r = run_cli("train --config " + dir + "/exp.json --set loss.alpha=0 "
                              "--set model.use_dropout=true --seeds 7 --out " + dir + "/run",
                              dir);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);

  const nlohmann::json doc = nlohmann::json::parse(slurp(dir + "/run/config.json"));
  CHECK(doc.at("loss").at("alpha").get<double>() == 0.0);
  CHECK(doc.at("model").at("use_dropout").get<bool>() == true);
  CHECK(doc.at("method").get<std::string>() == "muscle");
  REQUIRE(doc.at("seeds").size() == 1);
  CHECK(doc.at("seeds")[0].get<int>() == 7);
  CHECK(doc.at("out").get<std::string>() == dir + "/run");
  // Defaults the file never mentioned are materialized in the snapshot.
  CHECK(doc.at("labelprop").contains("kappa"));
}

TEST_CASE("sweep produces one result group per value") {
  const std::string dir = fresh_dir("sweep_ratio");
  write_file(dir + "/exp.json", tiny_config("supervised"));

  const CliResult r = run_cli("sweep --config " + dir + "/exp.json --param train.ratio "
                              "--values 0.5,1,2,3,4 --out " + dir + "/run",
                              dir);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);

  const std::vector<std::string> values = {"0.5", "1", "2", "3", "4"};
  for (const std::string& v : values) {
    const std::string group = dir + "/run/train.ratio_" + v;
    CHECK_MESSAGE(fs::exists(group + "/summary.csv"), group);
    // Each group's snapshot pins the value it ran with.
    const nlohmann::json doc = nlohmann::json::parse(slurp(group + "/config.json"));
    CHECK(doc.at("train").at("ratio").get<double>() == std::stod(v));
  }

  const auto table = read_csv(dir + "/run/sweep_summary.csv");
  REQUIRE(table.size() >= 1);
  CHECK(table[0] == std::vector<std::string>{"parameter", "value", "seed", "student_top1",
                                             "student_topk"});
  std::set<std::string> seen;
  size_t seed_rows = 0, mean_rows = 0;
  for (size_t i = 1; i < table.size(); ++i) {
    REQUIRE(table[i].size() == 5);
    CHECK(table[i][0] == "train.ratio");
    seen.insert(table[i][1]);
    if (table[i][2] == "mean")
      ++mean_rows;
    else
      ++seed_rows;
  }
  CHECK(seen == std::set<std::string>(values.begin(), values.end()));
  CHECK(seed_rows == 5);  // one seed per value
  CHECK(mean_rows == 5);

  SUBCASE("boolean switch sweeps into two groups") {
    const std::string bdir = fresh_dir("sweep_dropout");
    write_file(bdir + "/exp.json", tiny_config("supervised"));
    const CliResult b = run_cli("sweep --config " + bdir + "/exp.json "
                                "--set model.dropout_rate=0.3 --param model.use_dropout "
                                "--values true,false --out " + bdir + "/run",
                                bdir);
    CAPTURE(b.err);
    REQUIRE(b.exit_code == 0);
    CHECK(fs::exists(bdir + "/run/model.use_dropout_true/summary.csv"));
    CHECK(fs::exists(bdir + "/run/model.use_dropout_false/summary.csv"));
    const auto btable = read_csv(bdir + "/run/sweep_summary.csv");
    std::set<std::string> groups;
    for (size_t i = 1; i < btable.size(); ++i) groups.insert(btable[i][1]);
    CHECK(groups == std::set<std::string>{"true", "false"});
  }

  SUBCASE("an empty value list is a configuration error") {
    const CliResult e = run_cli("sweep --config " + dir + "/exp.json --param train.ratio "
                                "--values \"\" --out " + dir + "/run_empty",
                                dir);
    CHECK(e.exit_code == 2);
    CHECK(e.err.find("empty value list") != std::string::npos);
  }
}

TEST_CASE("sequester reports labeled and sequestered class types per method") {
  const std::string dir = fresh_dir("sequester");
  const std::string config =
      "{\n"
      "  \"method\": \"muscle_mt\",\n"
      "  \"seeds\": [1, 2],\n"
      "  \"labels_per_class\": 4,\n"
      "  \"dataset\": {\"kind\": \"hierarchical-blobs\", \"classes\": 4, \"subclasses\": 2,\n"
      "              \"n\": 320, \"test_n\": 160, \"noise\": 0.4},\n"
      "  \"model\": {\"hidden\": [8]},\n"
      "  \"train\": {\"epochs\": 2, \"batches_per_epoch\": 2,\n"
      "            \"labeled_per_batch\": 6, \"top_k\": 2}\n"
      "}\n";
  write_file(dir + "/exp.json", config);

  const CliResult r = run_cli("sequester --config " + dir + "/exp.json --out " + dir + "/run",
                              dir);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);
  CHECK(r.out.find("sequestered") != std::string::npos);

  const auto table = read_csv(dir + "/run/sequester_table.csv");
  CHECK(table[0] == std::vector<std::string>{"method", "class_type", "seed", "accuracy",
                                             "entropy"});
  // Per method: two seeds x two class types, plus a mean row per type.
  REQUIRE(table.size() == 1 + 2 * 6);

  std::set<std::string> methods, types;
  const double bound = std::log(4.0) + 1e-9;
  for (size_t i = 1; i < table.size(); ++i) {
    REQUIRE(table[i].size() == 5);
    methods.insert(table[i][0]);
    types.insert(table[i][1]);
    const double acc = std::stod(table[i][3]);
    CHECK(acc >= 0.0);
    CHECK(acc <= 1.0);
    const double ent = std::stod(table[i][4]);
    if (!std::isnan(ent)) {
      CHECK(ent >= 0.0);
      CHECK(ent <= bound);
    }
  }
  // The configured method is compared against a supervised baseline.
  CHECK(methods == std::set<std::string>{"muscle_mt", "supervised"});
  CHECK(types == std::set<std::string>{"labeled", "sequestered"});
  CHECK(fs::exists(dir + "/run/muscle_mt/summary.csv"));
  CHECK(fs::exists(dir + "/run/supervised/summary.csv"));

  SUBCASE("a dataset without superclass structure is refused") {
    const std::string fdir = fresh_dir("sequester_flat");
    write_file(fdir + "/exp.json", tiny_config("muscle_mt"));
    const CliResult f = run_cli("sequester --config " + fdir + "/exp.json --out " + fdir + "/run",
                                fdir);
    CHECK(f.exit_code == 2);
    CHECK(f.err.find("hierarchical") != std::string::npos);
  }
}

TEST_CASE("report aggregates result directories and flags missing seed files") {
  const std::string dir = fresh_dir("report");
  write_file(dir + "/exp.json", tiny_config("supervised"));

  // Two runs that differ in method land in two report rows.
  const CliResult a = run_cli("train --config " + dir + "/exp.json --seeds 1,2 --out " + dir +
                                  "/all/a",
                              dir);
  REQUIRE(a.exit_code == 0);
  const CliResult b = run_cli("train --config " + dir + "/exp.json --set method=muscle "
                              "--seeds 1,2 --out " + dir + "/all/b",
                              dir);
  REQUIRE(b.exit_code == 0);

  const CliResult r = run_cli("report " + dir + "/all", dir);
  CAPTURE(r.err);
  REQUIRE(r.exit_code == 0);

  const auto table = read_csv(dir + "/all/report.csv");
  CHECK(table[0] == std::vector<std::string>{"method", "labels_per_class", "seeds", "mean_top1",
                                             "std_top1", "incomplete"});
  REQUIRE(table.size() == 3);

  // Recompute the supervised row from its per-seed summary entries.
  std::vector<double> top1;
  for (const auto& row : read_csv(dir + "/all/a/summary.csv"))
    if (row[2] == "1" || row[2] == "2") top1.push_back(std::stod(row[3]));
  REQUIRE(top1.size() == 2);
  const double mean = (top1[0] + top1[1]) / 2.0;
  const double sd =
      std::sqrt((top1[0] - mean) * (top1[0] - mean) + (top1[1] - mean) * (top1[1] - mean));

  bool found = false;
  for (size_t i = 1; i < table.size(); ++i) {
    CHECK(table[i][2] == "2");
    CHECK(table[i][5] == "no");
    if (table[i][0] == "supervised") {
      found = true;
      CHECK(table[i][1] == "4");
      CHECK(std::stod(table[i][3]) == doctest::Approx(mean).epsilon(1e-12));
      CHECK(std::stod(table[i][4]) == doctest::Approx(sd).epsilon(1e-12));
    }
  }
  CHECK(found);

  SUBCASE("a seed listed in the snapshot without its metrics file flags the row") {
    fs::remove(dir + "/all/b/metrics_seed2.csv");
    const CliResult w = run_cli("report " + dir + "/all", dir);
    CHECK(w.exit_code == 0);
    CHECK(w.err.find("metrics_seed2.csv") != std::string::npos);
    CHECK(w.err.find("incomplete") != std::string::npos);
    for (const auto& row : read_csv(dir + "/all/report.csv")) {
      if (row[0] == "muscle") CHECK(row[5] == "yes");
      if (row[0] == "supervised") CHECK(row[5] == "no");
    }
  }

  SUBCASE("a directory with no results is a usage error") {
    const std::string empty = fresh_dir("report_empty");
    const CliResult e = run_cli("report " + empty, dir);
    CHECK(e.exit_code == 2);
    CHECK(e.err.find("no summary.csv") != std::string::npos);

    const CliResult m = run_cli("report " + empty + "/missing", dir);
    CHECK(m.exit_code == 2);
    CHECK(m.err.find("not a directory") != std::string::npos);
  }
}
