#include "muscle/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace muscle {

namespace {

using nlohmann::json;

json defaults() {
  json aug_light = {
      {"noise_std", 0.1},  {"scale_lo", 1.0}, {"scale_hi", 1.0},
      {"rotation", 0.0},   {"feature_dropout", 0.0},
      {"flip", false},     {"shift", 0},      {"brightness", 0.0},
  };
  json aug_hard = {
      {"noise_std", 0.5},  {"scale_lo", 0.9}, {"scale_hi", 1.1},
      {"rotation", 0.3},   {"feature_dropout", 0.1},
      {"flip", false},     {"shift", 0},      {"brightness", 0.0},
  };
  return json{
      {"method", "supervised"},
      {"out", ""},
      {"seeds", json::array({1})},
      {"labels_per_class", 10},
      {"sequester", false},
      {"dataset",
       {
           {"source", "synthetic"},
           {"kind", "blobs"},
           {"classes", 4},
           {"subclasses", 2},
           {"n", 2000},
           {"test_n", 1000},
           {"noise", 1.0},
           {"path", ""},
           {"labels_path", ""},
           {"test_frac", 0.25},
       }},
      {"model",
       {
           {"hidden", json::array({64, 64})},
           {"dropout_rate", 0.0},
           {"use_dropout", false},
           {"conv_channels", 0},
           {"conv_kernel", 0},
       }},
      {"train",
       {
           {"epochs", 30},
           {"batches_per_epoch", 20},
           {"labeled_per_batch", 16},
           {"ratio", 1.0},
           {"momentum", 0.9},
           {"ema_mu", 0.99},
           {"hard_replicas", 3},
           {"grad_clip", 0.0},
           {"top_k", 5},
           {"lr0", 0.05},
           {"lr_mode", "full_horizon"},
           {"lr_horizon", 0},
           {"lr_fraction", 0.4375},
       }},
      {"loss",
       {
           {"alpha", 1.0},
           {"beta", 0.0},
           {"alpha_warmup", 0},
           {"tau", 0.95},
       }},
      {"labelprop",
       {
           {"knn", 10},
           {"kappa", 0.99},
           {"top_k", 0},
           {"warmup_frac", 0.5},
           {"weight", 1.0},
           {"dump", false},
       }},
      {"augment",
       {
           {"light", aug_light},
           {"hard", aug_hard},
       }},
  };
}

void merge(json& base, const json& user, const std::string& path) {
  if (!user.is_object())
    throw ConfigError(path.empty() ? "config must be a JSON object"
                                   : path + ": expected an object");
  for (const auto& [key, val] : user.items()) {
    const std::string p = path.empty() ? key : path + "." + key;
    auto it = base.find(key);
    if (it == base.end()) throw ConfigError("unknown key: " + p);
    if (it->is_object())
      merge(*it, val, p);
    else
      *it = val;
  }
}

void apply_override(json& doc, const std::string& kv) {
  const size_t eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key=value, got: " + kv);
  const std::string path = kv.substr(0, eq);
  const std::string value = kv.substr(eq + 1);
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::parse_error&) {
    parsed = value;  // bare word, treat as string
  }
  json* cur = &doc;
  std::string walked;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string comp =
        path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    walked = walked.empty() ? comp : walked + "." + comp;
    if (comp.empty() || !cur->is_object() || !cur->contains(comp))
      throw ConfigError("unknown key: " + walked);
    cur = &(*cur)[comp];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (cur->is_object()) throw ConfigError("cannot override a whole section: " + path);
  *cur = parsed;
}

double num(const json& j, const std::string& name) {
  if (!j.is_number()) throw ConfigError(name + ": expected a number");
  return j.get<double>();
}

int integer(const json& j, const std::string& name) {
  if (!j.is_number_integer()) throw ConfigError(name + ": expected an integer");
  return j.get<int>();
}

bool boolean(const json& j, const std::string& name) {
  if (!j.is_boolean()) throw ConfigError(name + ": expected true or false");
  return j.get<bool>();
}

std::string str(const json& j, const std::string& name) {
  if (!j.is_string()) throw ConfigError(name + ": expected a string");
  return j.get<std::string>();
}

AugmentPolicy policy(const json& a, const std::string& path, AugmentPolicy::Kind kind) {
  AugmentPolicy p;
  p.kind = kind;
  p.noise_std = num(a.at("noise_std"), path + ".noise_std");
  p.scale_lo = num(a.at("scale_lo"), path + ".scale_lo");
  p.scale_hi = num(a.at("scale_hi"), path + ".scale_hi");
  p.rotation = num(a.at("rotation"), path + ".rotation");
  p.feature_dropout = num(a.at("feature_dropout"), path + ".feature_dropout");
  p.flip = boolean(a.at("flip"), path + ".flip");
  p.shift = integer(a.at("shift"), path + ".shift");
  p.brightness = num(a.at("brightness"), path + ".brightness");
  if (p.noise_std < 0.0) throw ConfigError(path + ".noise_std: must be nonnegative");
  if (!(p.scale_lo > 0.0) || p.scale_hi < p.scale_lo)
    throw ConfigError(path + ": need 0 < scale_lo <= scale_hi");
  if (p.rotation < 0.0) throw ConfigError(path + ".rotation: must be nonnegative");
  if (p.feature_dropout < 0.0 || p.feature_dropout > 1.0)
    throw ConfigError(path + ".feature_dropout: must lie in [0,1]");
  if (p.shift < 0) throw ConfigError(path + ".shift: must be nonnegative");
  if (p.brightness < 0.0) throw ConfigError(path + ".brightness: must be nonnegative");
  return p;
}

ExperimentSpec extract(const json& d) {
  ExperimentSpec s;
  try {
    s.train.method = method_from(str(d.at("method"), "method"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("method: ") + e.what());
  }

  s.labels_per_class = integer(d.at("labels_per_class"), "labels_per_class");
  if (s.labels_per_class < 1) throw ConfigError("labels_per_class: must be >= 1");
  s.sequester = boolean(d.at("sequester"), "sequester");

  const json& seeds = d.at("seeds");
  if (!seeds.is_array() || seeds.empty())
    throw ConfigError("seeds: expected a non-empty array");
  s.seeds.clear();
  for (size_t i = 0; i < seeds.size(); ++i) {
    const int v = integer(seeds[i], "seeds[" + std::to_string(i) + "]");
    if (v < 0) throw ConfigError("seeds[" + std::to_string(i) + "]: must be nonnegative");
    s.seeds.push_back(static_cast<uint64_t>(v));
  }

  const json& ds = d.at("dataset");
  const std::string source = str(ds.at("source"), "dataset.source");
  if (source == "synthetic")
    s.data.source = DatasetSpec::Source::Synthetic;
  else if (source == "csv")
    s.data.source = DatasetSpec::Source::Csv;
  else if (source == "idx")
    s.data.source = DatasetSpec::Source::Idx;
  else
    throw ConfigError("dataset.source: expected synthetic, csv, or idx");
  try {
    s.data.kind = synthetic_kind_from(str(ds.at("kind"), "dataset.kind"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("dataset.kind: ") + e.what());
  }
  s.data.classes = integer(ds.at("classes"), "dataset.classes");
  s.data.subclasses = integer(ds.at("subclasses"), "dataset.subclasses");
  s.data.n = integer(ds.at("n"), "dataset.n");
  s.data.test_n = integer(ds.at("test_n"), "dataset.test_n");
  s.data.noise = num(ds.at("noise"), "dataset.noise");
  s.data.path = str(ds.at("path"), "dataset.path");
  s.data.labels_path = str(ds.at("labels_path"), "dataset.labels_path");
  s.data.test_frac = num(ds.at("test_frac"), "dataset.test_frac");
  if (s.data.source == DatasetSpec::Source::Synthetic) {
    if (s.data.classes < 2) throw ConfigError("dataset.classes: must be >= 2");
    if (s.data.subclasses < 1) throw ConfigError("dataset.subclasses: must be >= 1");
    if (s.data.n < 1 || s.data.test_n < 1)
      throw ConfigError("dataset: n and test_n must be >= 1");
    if (s.data.noise < 0.0) throw ConfigError("dataset.noise: must be nonnegative");
  } else {
    if (s.data.path.empty()) throw ConfigError("dataset.path: required for file sources");
    if (s.data.source == DatasetSpec::Source::Idx && s.data.labels_path.empty())
      throw ConfigError("dataset.labels_path: required for idx sources");
    if (!(s.data.test_frac > 0.0 && s.data.test_frac < 1.0))
      throw ConfigError("dataset.test_frac: must lie in (0,1)");
  }

  const json& m = d.at("model");
  const json& hidden = m.at("hidden");
  if (!hidden.is_array() || hidden.empty())
    throw ConfigError("model.hidden: expected a non-empty array");
  s.net.hidden.clear();
  for (size_t i = 0; i < hidden.size(); ++i) {
    const int w = integer(hidden[i], "model.hidden[" + std::to_string(i) + "]");
    if (w < 1) throw ConfigError("model.hidden[" + std::to_string(i) + "]: must be >= 1");
    s.net.hidden.push_back(w);
  }
  s.net.dropout_rate = num(m.at("dropout_rate"), "model.dropout_rate");
  if (s.net.dropout_rate < 0.0 || s.net.dropout_rate >= 1.0)
    throw ConfigError("model.dropout_rate: must lie in [0,1)");
  s.net.use_dropout = boolean(m.at("use_dropout"), "model.use_dropout");
  s.net.conv_channels = integer(m.at("conv_channels"), "model.conv_channels");
  s.net.conv_kernel = integer(m.at("conv_kernel"), "model.conv_kernel");
  if (s.net.conv_channels < 0) throw ConfigError("model.conv_channels: must be >= 0");
  if (s.net.conv_channels > 0 && s.net.conv_kernel < 1)
    throw ConfigError("model.conv_kernel: must be >= 1 when conv is enabled");

  const json& t = d.at("train");
  s.train.epochs = integer(t.at("epochs"), "train.epochs");
  s.train.batches_per_epoch = integer(t.at("batches_per_epoch"), "train.batches_per_epoch");
  s.train.labeled_per_batch = integer(t.at("labeled_per_batch"), "train.labeled_per_batch");
  s.train.ratio = num(t.at("ratio"), "train.ratio");
  s.train.momentum = num(t.at("momentum"), "train.momentum");
  s.train.ema_mu = num(t.at("ema_mu"), "train.ema_mu");
  s.train.hard_replicas = integer(t.at("hard_replicas"), "train.hard_replicas");
  s.train.grad_clip = num(t.at("grad_clip"), "train.grad_clip");
  s.train.top_k = integer(t.at("top_k"), "train.top_k");
  s.train.lr.lr0 = num(t.at("lr0"), "train.lr0");
  const std::string mode = str(t.at("lr_mode"), "train.lr_mode");
  if (mode == "full_horizon")
    s.train.lr.mode = LrMode::FullHorizon;
  else if (mode == "cycle_fraction")
    s.train.lr.mode = LrMode::CycleFraction;
  else
    throw ConfigError("train.lr_mode: expected full_horizon or cycle_fraction");
  s.train.lr.horizon = integer(t.at("lr_horizon"), "train.lr_horizon");
  s.train.lr.fraction = num(t.at("lr_fraction"), "train.lr_fraction");

  const json& l = d.at("loss");
  s.train.weights.alpha = num(l.at("alpha"), "loss.alpha");
  s.train.weights.beta = num(l.at("beta"), "loss.beta");
  s.train.alpha_warmup = integer(l.at("alpha_warmup"), "loss.alpha_warmup");
  s.train.fixmatch.tau = num(l.at("tau"), "loss.tau");

  const json& lp = d.at("labelprop");
  s.train.lp.knn = integer(lp.at("knn"), "labelprop.knn");
  s.train.lp.kappa = num(lp.at("kappa"), "labelprop.kappa");
  s.train.lp.top_k = integer(lp.at("top_k"), "labelprop.top_k");
  s.train.lp.warmup_frac = num(lp.at("warmup_frac"), "labelprop.warmup_frac");
  s.train.lp.weight = num(lp.at("weight"), "labelprop.weight");
  s.lp_dump = boolean(lp.at("dump"), "labelprop.dump");

  const json& aug = d.at("augment");
  s.light = policy(aug.at("light"), "augment.light", AugmentPolicy::Kind::Light);
  s.hard = policy(aug.at("hard"), "augment.hard", AugmentPolicy::Kind::Hard);

  try {
    s.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

std::string resolve_out(const json& doc, const std::string& origin,
                        const std::string& out_override) {
  if (!out_override.empty()) return out_override;
  const std::string out = str(doc.at("out"), "out");
  if (!out.empty()) return out;
  const char* root = std::getenv("MUSCLE_OUT_ROOT");
  const std::string base = (root && *root) ? root : "results";
  std::string stem = std::filesystem::path(origin).stem().string();
  if (stem.empty()) stem = "run";
  return base + "/" + stem;
}

json parse_seed_list(const std::string& text) {
  json arr = json::array();
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      size_t used = 0;
      const long v = std::stol(part, &used);
      if (used != part.size() || v < 0) throw std::invalid_argument(part);
      arr.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("seeds: cannot parse '" + part + "' as a nonnegative integer");
    }
  }
  if (arr.empty()) throw ConfigError("seeds: empty list");
  return arr;
}

}  // namespace

LoadedConfig parse_config_text(const std::string& text, const std::string& origin,
                               const std::vector<std::string>& overrides,
                               const std::string& seeds_override,
                               const std::string& out_override) {
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  json doc = defaults();
  merge(doc, user, "");
  for (const std::string& kv : overrides) apply_override(doc, kv);
  if (!seeds_override.empty()) doc["seeds"] = parse_seed_list(seeds_override);
  if (!out_override.empty()) doc["out"] = out_override;

  LoadedConfig lc;
  lc.spec = extract(doc);
  lc.out_dir = resolve_out(doc, origin, out_override);
  lc.snapshot = doc.dump(2) + "\n";
  return lc;
}

LoadedConfig load_config(const std::string& path, const std::vector<std::string>& overrides,
                         const std::string& seeds_override, const std::string& out_override) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return parse_config_text(buf.str(), path, overrides, seeds_override, out_override);
}

std::string default_config_text() { return defaults().dump(2) + "\n"; }

}  // namespace muscle
