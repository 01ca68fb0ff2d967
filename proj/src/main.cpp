#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "muscle/config.hpp"
#include "muscle/train.hpp"

namespace fs = std::filesystem;
using namespace muscle;

namespace {

void append_double(std::string& out, double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, res.ptr);
}

std::string format3(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + path);
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == '/' || c == '\\' || c == ' ') c = '-';
  return s;
}

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(part);
  return out;
}

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seeds;
  std::string out;
};

int cmd_train(const CommonArgs& a) {
  LoadedConfig lc = load_config(a.config_path, a.sets, a.seeds, a.out);
  fs::create_directories(lc.out_dir);
  write_text(lc.out_dir + "/config.json", lc.snapshot);
  ExperimentResult res = run_experiment(lc.spec, lc.out_dir);
  std::cout << method_name(lc.spec.train.method) << ": top-1 " << format3(res.mean_top1)
            << " +/- " << format3(res.std_top1) << " over " << res.seeds.size()
            << " seed(s), results in " << lc.out_dir << "\n";
  return 0;
}

int cmd_sweep(const CommonArgs& a, const std::string& param, const std::string& values_csv) {
  const std::vector<std::string> values = split_csv(values_csv);
  if (values.empty()) throw ConfigError("sweep: empty value list");
  std::string base_out;
  std::string table = "parameter,value,seed,student_top1,student_topk\n";
  for (const std::string& value : values) {
    std::vector<std::string> sets = a.sets;
    sets.push_back(param + "=" + value);
    LoadedConfig lc = load_config(a.config_path, sets, a.seeds, a.out);
    if (base_out.empty()) base_out = lc.out_dir;
    const std::string group = base_out + "/" + sanitize(param) + "_" + sanitize(value);
    fs::create_directories(group);
    write_text(group + "/config.json", lc.snapshot);
    ExperimentResult res = run_experiment(lc.spec, group);
    for (const SeedSummary& s : res.seeds) {
      table += param + ',' + value + ',' + std::to_string(s.seed);
      table += ',';
      append_double(table, s.final_record.student_top1);
      table += ',';
      append_double(table, s.final_record.student_topk);
      table += '\n';
    }
    table += param + ',' + value + ",mean,";
    append_double(table, res.mean_top1);
    table += ',';
    append_double(table, res.std_top1);
    table += '\n';
    std::cout << param << "=" << value << ": top-1 " << format3(res.mean_top1) << " +/- "
              << format3(res.std_top1) << "\n";
  }
  write_text(base_out + "/sweep_summary.csv", table);
  std::cout << "sweep table: " << base_out << "/sweep_summary.csv\n";
  return 0;
}

int cmd_sequester(const CommonArgs& a) {
  LoadedConfig lc = load_config(a.config_path, a.sets, a.seeds, a.out);
  if (lc.spec.data.source != DatasetSpec::Source::Synthetic ||
      lc.spec.data.kind != SyntheticKind::HierarchicalBlobs)
    throw ConfigError("sequester: dataset is not hierarchical (need a "
                      "hierarchical-blobs dataset spec)");
  lc.spec.sequester = true;
  fs::create_directories(lc.out_dir);
  write_text(lc.out_dir + "/config.json", lc.snapshot);

  std::vector<Method> methods{lc.spec.train.method};
  if (lc.spec.train.method != Method::Supervised) methods.push_back(Method::Supervised);

  const double entropy_bound = std::log(static_cast<double>(lc.spec.data.classes)) + 1e-9;
  std::string table = "method,class_type,seed,accuracy,entropy\n";
  auto add_row = [&](const std::string& method, const char* type, const std::string& seed,
                     double acc, double ent) {
    if (!std::isnan(ent) && ent > entropy_bound)
      throw std::runtime_error("sequester: entropy " + std::to_string(ent) +
                               " exceeds ln C bound for " + method + "/" + type);
    table += method + ',' + type + ',' + seed + ',';
    append_double(table, acc);
    table += ',';
    append_double(table, ent);
    table += '\n';
  };

  for (Method m : methods) {
    ExperimentSpec spec = lc.spec;
    spec.train.method = m;
    const std::string name = method_name(m);
    ExperimentResult res = run_experiment(spec, lc.out_dir + "/" + name);
    double sum[2] = {0, 0}, sum_e[2] = {0, 0};
    for (const SeedSummary& s : res.seeds) {
      const std::string seed = std::to_string(s.seed);
      add_row(name, "labeled", seed, s.final_record.acc_type0, s.final_record.entropy_type0);
      add_row(name, "sequestered", seed, s.final_record.acc_type1,
              s.final_record.entropy_type1);
      sum[0] += s.final_record.acc_type0;
      sum[1] += s.final_record.acc_type1;
      sum_e[0] += s.final_record.entropy_type0;
      sum_e[1] += s.final_record.entropy_type1;
    }
    const double n = static_cast<double>(res.seeds.size());
    add_row(name, "labeled", "mean", sum[0] / n, sum_e[0] / n);
    add_row(name, "sequestered", "mean", sum[1] / n, sum_e[1] / n);
  }
  write_text(lc.out_dir + "/sequester_table.csv", table);
  std::cout << table;
  return 0;
}

struct ReportGroup {
  std::vector<double> top1;
  bool incomplete = false;
};

int cmd_report(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("report: not a directory: " + dir);
  std::vector<fs::path> summaries;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().filename() == "summary.csv")
      summaries.push_back(entry.path());
  std::sort(summaries.begin(), summaries.end());
  if (summaries.empty()) throw ConfigError("report: no summary.csv found under " + dir);

  std::map<std::pair<std::string, std::string>, ReportGroup> groups;
  for (const fs::path& path : summaries) {
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);  // header
    std::vector<uint64_t> seen_seeds;
    std::pair<std::string, std::string> key;
    while (std::getline(f, line)) {
      const std::vector<std::string> cols = split_csv(line);
      if (cols.size() < 4) continue;
      uint64_t seed = 0;
      const char* begin = cols[2].data();
      auto conv = std::from_chars(begin, begin + cols[2].size(), seed);
      if (conv.ec != std::errc{} || conv.ptr != begin + cols[2].size())
        continue;  // aggregate row
      key = {cols[0], cols[1]};
      double top1 = 0.0;
      const char* vb = cols[3].data();
      std::from_chars(vb, vb + cols[3].size(), top1);
      groups[key].top1.push_back(top1);
      seen_seeds.push_back(seed);
    }
    // A run directory lists its seeds in the config snapshot; a missing
    // per-seed metrics file marks the row incomplete.
    const fs::path cfg = path.parent_path() / "config.json";
    if (!seen_seeds.empty() && fs::exists(cfg)) {
      try {
        std::ifstream cf(cfg);
        std::stringstream buf;
        buf << cf.rdbuf();
        const nlohmann::json doc = nlohmann::json::parse(buf.str());
        for (const auto& s : doc.at("seeds")) {
          const uint64_t want = s.get<uint64_t>();
          const fs::path metrics =
              path.parent_path() / ("metrics_seed" + std::to_string(want) + ".csv");
          if (!fs::exists(metrics)) {
            groups[key].incomplete = true;
            std::cerr << "warning: " << metrics.string() << " is missing; row flagged "
                      << "incomplete\n";
          }
        }
      } catch (const std::exception&) {
        // snapshot unreadable; nothing to cross-check
      }
    }
  }

  std::string table = "method,labels_per_class,seeds,mean_top1,std_top1,incomplete\n";
  std::cout << "method            labels  seeds  top-1 (mean +/- std)\n";
  for (const auto& [key, grp] : groups) {
    const size_t n = grp.top1.size();
    double mean = 0.0;
    for (double v : grp.top1) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    if (n > 1) {
      for (double v : grp.top1) var += (v - mean) * (v - mean);
      var /= static_cast<double>(n - 1);
    }
    const double sd = std::sqrt(var);
    table += key.first + ',' + key.second + ',' + std::to_string(n) + ',';
    append_double(table, mean);
    table += ',';
    append_double(table, sd);
    table += ',';
    table += grp.incomplete ? "yes" : "no";
    table += '\n';
    std::cout << key.first << std::string(key.first.size() < 18 ? 18 - key.first.size() : 1, ' ')
              << key.second << "      " << n << "      " << format3(mean) << " +/- "
              << format3(sd) << (grp.incomplete ? "  (incomplete)" : "") << "\n";
  }
  write_text((fs::path(dir) / "report.csv").string(), table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-supervised learning toolkit: mutual-information training, "
               "mean-teacher consistency, label propagation, and FixMatch"};
  app.require_subcommand(1);

  CommonArgs train_args, sweep_args, seq_args;
  std::string sweep_param, sweep_values, report_dir;

  auto add_common = [](CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config_path, "experiment config file (JSON)")->required();
    cmd->add_option("--set", a.sets, "dotted-path override key=value (repeatable)");
    cmd->add_option("--seeds", a.seeds, "comma-separated seed list");
    cmd->add_option("--out", a.out, "output directory");
  };

  CLI::App* train = app.add_subcommand("train", "run one experiment over its seed list");
  add_common(train, train_args);
  CLI::App* sweep = app.add_subcommand("sweep", "repeat an experiment across parameter values");
  add_common(sweep, sweep_args);
  sweep->add_option("--param", sweep_param, "dotted config path to vary")->required();
  sweep->add_option("--values", sweep_values, "comma-separated values")->required();
  CLI::App* sequester =
      app.add_subcommand("sequester", "class-sequestering protocol with a supervised baseline");
  add_common(sequester, seq_args);
  CLI::App* report = app.add_subcommand("report", "aggregate result directories into one table");
  report->add_option("dir", report_dir, "results directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(train_args);
    if (sweep->parsed()) return cmd_sweep(sweep_args, sweep_param, sweep_values);
    if (sequester->parsed()) return cmd_sequester(seq_args);
    if (report->parsed()) return cmd_report(report_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
