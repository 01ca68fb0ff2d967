#include "muscle/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace muscle {

int Dataset::superclass_count() const {
  int s = 0;
  for (int v : superclass) s = std::max(s, v + 1);
  return s;
}

void Dataset::validate() const {
  if (x.rank() != 2 && x.rank() != 4)
    throw std::invalid_argument("dataset: samples must be [N,D] or [N,H,W,ch]");
  if (static_cast<int>(labels.size()) != size())
    throw std::invalid_argument("dataset: " + std::to_string(labels.size()) + " labels for " +
                                std::to_string(size()) + " samples");
  if (class_count < 1) throw std::invalid_argument("dataset: class count must be positive");
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= class_count)
      throw std::invalid_argument("dataset: label " + std::to_string(labels[i]) +
                                  " at sample " + std::to_string(i) + " outside [0," +
                                  std::to_string(class_count) + ")");
  if (!superclass.empty()) {
    if (static_cast<int>(superclass.size()) != class_count)
      throw std::invalid_argument("dataset: superclass map must cover all subclasses");
    for (int v : superclass)
      if (v < 0) throw std::invalid_argument("dataset: negative superclass id");
  }
}

namespace {

std::vector<int> row_shape(const Tensor& t) {
  return std::vector<int>(t.shape.begin() + 1, t.shape.end());
}

Tensor slice_row(const Tensor& t, int i) {
  const long long stride = t.numel() / t.dim(0);
  Tensor row(row_shape(t));
  std::memcpy(row.data(), t.data() + static_cast<long long>(i) * stride,
              sizeof(double) * static_cast<size_t>(stride));
  return row;
}

void place_row(Tensor& t, int i, const Tensor& row) {
  const long long stride = t.numel() / t.dim(0);
  std::memcpy(t.data() + static_cast<long long>(i) * stride, row.data(),
              sizeof(double) * static_cast<size_t>(stride));
}

}  // namespace

Tensor dataset_row(const Dataset& ds, int i) {
  if (i < 0 || i >= ds.size()) throw std::invalid_argument("dataset_row: index out of range");
  return slice_row(ds.x, i);
}

Dataset subset(const Dataset& ds, const std::vector<int>& indices) {
  if (indices.empty()) throw std::invalid_argument("subset: empty index list");
  std::vector<int> shape = ds.x.shape;
  shape[0] = static_cast<int>(indices.size());
  Dataset out;
  out.x = Tensor(std::move(shape));
  out.labels.reserve(indices.size());
  const long long stride = ds.x.numel() / ds.size();
  for (size_t k = 0; k < indices.size(); ++k) {
    const int i = indices[k];
    if (i < 0 || i >= ds.size()) throw std::invalid_argument("subset: index out of range");
    std::memcpy(out.x.data() + static_cast<long long>(k) * stride,
                ds.x.data() + static_cast<long long>(i) * stride,
                sizeof(double) * static_cast<size_t>(stride));
    out.labels.push_back(ds.labels[static_cast<size_t>(i)]);
  }
  out.class_count = ds.class_count;
  out.superclass = ds.superclass;
  return out;
}

namespace {

std::vector<std::vector<int>> by_class(const Dataset& ds) {
  std::vector<std::vector<int>> groups(static_cast<size_t>(ds.class_count));
  for (int i = 0; i < ds.size(); ++i)
    groups[static_cast<size_t>(ds.labels[static_cast<size_t>(i)])].push_back(i);
  return groups;
}

SplitPlan assemble_split(const Dataset& ds, const std::vector<std::vector<int>>& pools,
                         int per_class, uint64_t seed) {
  Rng rng(mix_seed(seed, kSplitStream));
  std::vector<uint8_t> taken(static_cast<size_t>(ds.size()), 0);
  SplitPlan plan;
  plan.seed = seed;
  for (const auto& pool : pools) {
    if (pool.empty()) continue;
    for (int i : sample_without_replacement(pool, per_class, rng)) {
      plan.labeled.push_back(i);
      taken[static_cast<size_t>(i)] = 1;
    }
  }
  std::sort(plan.labeled.begin(), plan.labeled.end());
  for (int i = 0; i < ds.size(); ++i)
    if (!taken[static_cast<size_t>(i)]) plan.unlabeled.push_back(i);
  return plan;
}

}  // namespace

SplitPlan split_labeled(const Dataset& ds, int per_class, uint64_t seed) {
  ds.validate();
  if (per_class < 1) throw std::invalid_argument("split_labeled: per-class count must be >= 1");
  auto groups = by_class(ds);
  for (int c = 0; c < ds.class_count; ++c)
    if (static_cast<int>(groups[static_cast<size_t>(c)].size()) < per_class)
      throw std::invalid_argument("split_labeled: class " + std::to_string(c) + " has only " +
                                  std::to_string(groups[static_cast<size_t>(c)].size()) +
                                  " samples for a quota of " + std::to_string(per_class));
  return assemble_split(ds, groups, per_class, seed);
}

bool SequesterPlan::all_sequestered() const {
  for (uint8_t v : is_sequestered)
    if (!v) return false;
  return true;
}

SequesterPlan sequester_classes(const Dataset& ds, uint64_t seed) {
  ds.validate();
  if (!ds.has_hierarchy())
    throw std::invalid_argument("sequester_classes: dataset has no class hierarchy");
  const int supers = ds.superclass_count();
  std::vector<std::vector<int>> subs(static_cast<size_t>(supers));
  for (int c = 0; c < ds.class_count; ++c)
    subs[static_cast<size_t>(ds.superclass[static_cast<size_t>(c)])].push_back(c);
  Rng rng(mix_seed(seed, kSequesterStream));
  SequesterPlan plan;
  plan.is_sequestered.assign(static_cast<size_t>(ds.class_count), 0);
  for (int s = 0; s < supers; ++s) {
    const auto& candidates = subs[static_cast<size_t>(s)];
    if (candidates.empty())
      throw std::invalid_argument("sequester_classes: superclass " + std::to_string(s) +
                                  " has no subclasses");
    const int chosen = candidates[static_cast<size_t>(rng.below(
        static_cast<int>(candidates.size())))];
    plan.sequestered.push_back(chosen);
    plan.is_sequestered[static_cast<size_t>(chosen)] = 1;
  }
  return plan;
}

SplitPlan split_labeled_sequestered(const Dataset& ds, const SequesterPlan& plan,
                                    int per_class, uint64_t seed) {
  ds.validate();
  if (static_cast<int>(plan.is_sequestered.size()) != ds.class_count)
    throw std::invalid_argument("split_labeled_sequestered: plan does not match dataset");
  if (per_class < 1)
    throw std::invalid_argument("split_labeled_sequestered: per-class count must be >= 1");
  auto groups = by_class(ds);
  for (int c = 0; c < ds.class_count; ++c) {
    auto& pool = groups[static_cast<size_t>(c)];
    if (plan.is_sequestered[static_cast<size_t>(c)]) {
      pool.clear();  // label information fully withheld
      continue;
    }
    if (static_cast<int>(pool.size()) < per_class)
      throw std::invalid_argument("split_labeled_sequestered: class " + std::to_string(c) +
                                  " has only " + std::to_string(pool.size()) +
                                  " samples for a quota of " + std::to_string(per_class));
  }
  return assemble_split(ds, groups, per_class, seed);
}

Dataset to_superclass_targets(const Dataset& ds) {
  if (!ds.has_hierarchy())
    throw std::invalid_argument("to_superclass_targets: dataset has no class hierarchy");
  Dataset out;
  out.x = ds.x;
  out.class_count = ds.superclass_count();
  out.labels.reserve(ds.labels.size());
  for (int y : ds.labels) out.labels.push_back(ds.superclass[static_cast<size_t>(y)]);
  return out;
}

std::vector<int> class_types(const Dataset& ds, const SequesterPlan& plan) {
  if (static_cast<int>(plan.is_sequestered.size()) != ds.class_count)
    throw std::invalid_argument("class_types: plan does not match dataset");
  std::vector<int> types;
  types.reserve(ds.labels.size());
  for (int y : ds.labels) types.push_back(plan.is_sequestered[static_cast<size_t>(y)] ? 1 : 0);
  return types;
}

ComposedBatch compose_batch(const Dataset& ds, const SplitPlan& plan, double r, int j,
                            Rng& rng) {
  if (j < 1) throw std::invalid_argument("compose_batch: J must be >= 1");
  if (r < 0.0) throw std::invalid_argument("compose_batch: ratio must be nonnegative");
  const int i_count = static_cast<int>(std::floor(r * j + 0.5));
  if (j > static_cast<int>(plan.labeled.size()))
    throw std::invalid_argument("compose_batch: labeled pool holds " +
                                std::to_string(plan.labeled.size()) + " samples, need " +
                                std::to_string(j));
  if (i_count > static_cast<int>(plan.unlabeled.size()))
    throw std::invalid_argument("compose_batch: unlabeled pool holds " +
                                std::to_string(plan.unlabeled.size()) + " samples, need " +
                                std::to_string(i_count));

  ComposedBatch b;
  b.unlabeled_count = i_count;
  b.labeled_count = j;
  if (i_count > 0)
    b.indices = sample_without_replacement(plan.unlabeled, i_count, rng);
  for (int idx : sample_without_replacement(plan.labeled, j, rng)) {
    b.indices.push_back(idx);
    b.labels.push_back(ds.labels[static_cast<size_t>(idx)]);
  }

  std::vector<int> shape = ds.x.shape;
  shape[0] = i_count + j;
  b.base = Tensor(std::move(shape));
  for (size_t row = 0; row < b.indices.size(); ++row)
    place_row(b.base, static_cast<int>(row), dataset_row(ds, b.indices[row]));
  return b;
}

namespace {

void augment_vector(std::vector<double>& v, const AugmentPolicy& p, Rng& rng) {
  const double scale = rng.uniform(p.scale_lo, p.scale_hi);
  for (auto& x : v) x *= scale;
  const double angle = rng.uniform(-p.rotation, p.rotation);
  if (v.size() >= 2) {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    const double x0 = v[0];
    const double x1 = v[1];
    v[0] = c * x0 - s * x1;
    v[1] = s * x0 + c * x1;
  }
  for (auto& x : v)
    if (rng.coin(p.feature_dropout)) x = 0.0;
  for (auto& x : v) x += p.noise_std * rng.normal();
}

void augment_image(Tensor& img, const AugmentPolicy& p, Rng& rng) {
  const int h = img.dim(0);
  const int w = img.dim(1);
  const int ch = img.dim(2);
  const bool do_flip = p.flip && rng.coin(0.5);
  int dy = 0, dx = 0;
  if (p.shift > 0) {
    dy = rng.below(2 * p.shift + 1) - p.shift;
    dx = rng.below(2 * p.shift + 1) - p.shift;
  }
  if (do_flip || dy != 0 || dx != 0) {
    Tensor out(img.shape);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int sx0 = do_flip ? w - 1 - x : x;
        const int sy = y - dy;
        const int sx = sx0 - dx;
        if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
        for (int c = 0; c < ch; ++c)
          out.values[static_cast<size_t>((y * w + x) * ch + c)] =
              img.values[static_cast<size_t>((sy * w + sx) * ch + c)];
      }
    img = std::move(out);
  }
  const double delta = rng.uniform(-p.brightness, p.brightness);
  for (auto& x : img.values) x += delta;
  for (auto& x : img.values)
    if (rng.coin(p.feature_dropout)) x = 0.0;
  for (auto& x : img.values) x += p.noise_std * rng.normal();
}

}  // namespace

Tensor augment(const Tensor& x, const AugmentPolicy& policy, uint64_t seed) {
  if (policy.scale_hi < policy.scale_lo)
    throw std::invalid_argument("augment: empty scale range");
  if (policy.rotation < 0.0 || policy.noise_std < 0.0 || policy.brightness < 0.0 ||
      policy.feature_dropout < 0.0 || policy.feature_dropout >= 1.0 || policy.shift < 0)
    throw std::invalid_argument("augment: policy parameter out of range");
  Rng rng(seed);
  Tensor out = x;
  if (x.rank() == 1) {
    augment_vector(out.values, policy, rng);
  } else if (x.rank() == 3) {
    augment_image(out, policy, rng);
  } else {
    throw std::invalid_argument("augment: sample must be rank 1 (vector) or rank 3 (image), got " +
                                shape_str(x.shape));
  }
  return out;
}

Tensor augment_rows(const Tensor& rows, const AugmentPolicy& policy, uint64_t seed) {
  if (rows.rank() != 2 && rows.rank() != 4)
    throw std::invalid_argument("augment_rows: batch must be rank 2 or 4");
  Tensor out(rows.shape);
  for (int i = 0; i < rows.dim(0); ++i)
    place_row(out, i, augment(slice_row(rows, i), policy, mix_seed(seed, static_cast<uint64_t>(i))));
  return out;
}

void fill_light(ComposedBatch& batch, const AugmentPolicy& policy, uint64_t seed) {
  batch.light = augment_rows(batch.base, policy, seed);
}

void expand_hard_replicas(ComposedBatch& batch, int k, const AugmentPolicy& policy,
                          uint64_t seed) {
  if (k < 1) throw std::invalid_argument("expand_hard_replicas: k must be >= 1");
  batch.hard.clear();
  batch.hard.reserve(static_cast<size_t>(k));
  for (int rep = 0; rep < k; ++rep)
    batch.hard.push_back(augment_rows(batch.base, policy, mix_seed(seed, static_cast<uint64_t>(rep))));
}

namespace {

[[noreturn]] void csv_fail(const std::string& path, int line, const std::string& msg) {
  throw std::runtime_error(path + " line " + std::to_string(line) + ": " + msg);
}

bool parse_double(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = b + s.size();
  auto res = std::from_chars(b, e, out);
  return res.ec == std::errc() && res.ptr == e;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r' && c != ' ' && c != '\t') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

}  // namespace

Dataset load_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  int cols = -1;
  int max_label = -1;
  std::string line;
  int line_no = 0;
  bool first_data = true;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_fields(line);
    if (first_data) {
      bool numeric = true;
      double tmp;
      for (const auto& f : fields)
        if (!parse_double(f, tmp)) {
          numeric = false;
          break;
        }
      first_data = false;
      if (!numeric) continue;  // header
    }
    if (cols == -1) {
      cols = static_cast<int>(fields.size());
      if (cols < 2) csv_fail(path, line_no, "need at least one feature and a label column");
    } else if (static_cast<int>(fields.size()) != cols) {
      csv_fail(path, line_no, "expected " + std::to_string(cols) + " columns, got " +
                                  std::to_string(fields.size()));
    }
    std::vector<double> row;
    row.reserve(static_cast<size_t>(cols - 1));
    for (int c = 0; c < cols - 1; ++c) {
      double v;
      if (!parse_double(fields[static_cast<size_t>(c)], v))
        csv_fail(path, line_no, "expected number, got '" + fields[static_cast<size_t>(c)] + "'");
      row.push_back(v);
    }
    double lab;
    if (!parse_double(fields[static_cast<size_t>(cols - 1)], lab) ||
        lab != std::floor(lab) || lab < 0.0 || lab > 1e6)
      csv_fail(path, line_no, "label must be a nonnegative integer, got '" +
                                  fields[static_cast<size_t>(cols - 1)] + "'");
    labels.push_back(static_cast<int>(lab));
    max_label = std::max(max_label, static_cast<int>(lab));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");

  Dataset ds;
  ds.x = Tensor({static_cast<int>(rows.size()), cols - 1});
  for (size_t i = 0; i < rows.size(); ++i)
    std::memcpy(ds.x.data() + i * static_cast<size_t>(cols - 1), rows[i].data(),
                sizeof(double) * rows[i].size());
  ds.labels = std::move(labels);
  ds.class_count = max_label + 1;
  return ds;
}

void write_csv(const std::string& path, const Dataset& ds) {
  ds.validate();
  if (ds.x.rank() != 2)
    throw std::invalid_argument("write_csv: only vector datasets; use write_idx for images");
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  const int d = ds.x.cols();
  for (int c = 0; c < d; ++c) os << "f" << c << ",";
  os << "label\n";
  char buf[64];
  for (int i = 0; i < ds.size(); ++i) {
    for (int c = 0; c < d; ++c) {
      auto res = std::to_chars(buf, buf + sizeof(buf), ds.x.at(i, c));
      os.write(buf, res.ptr - buf);
      os << ',';
    }
    os << ds.labels[static_cast<size_t>(i)] << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

namespace {

uint32_t read_be32(std::istream& is, const std::string& path) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error(path + ": truncated");
  return (static_cast<uint32_t>(b[0]) << 24) | (static_cast<uint32_t>(b[1]) << 16) |
         (static_cast<uint32_t>(b[2]) << 8) | b[3];
}

void write_be32(std::ostream& os, uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream im(images_path, std::ios::binary);
  if (!im) throw std::runtime_error("cannot open " + images_path);
  const uint32_t im_magic = read_be32(im, images_path);
  if (im_magic != 0x00000803)
    throw std::runtime_error(images_path + ": bad image magic " + std::to_string(im_magic));
  const int n = static_cast<int>(read_be32(im, images_path));
  const int h = static_cast<int>(read_be32(im, images_path));
  const int w = static_cast<int>(read_be32(im, images_path));
  if (n < 1 || h < 1 || w < 1) throw std::runtime_error(images_path + ": bad dimensions");
  std::vector<unsigned char> bytes(static_cast<size_t>(n) * h * w);
  im.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!im) throw std::runtime_error(images_path + ": truncated");

  std::ifstream lb(labels_path, std::ios::binary);
  if (!lb) throw std::runtime_error("cannot open " + labels_path);
  const uint32_t lb_magic = read_be32(lb, labels_path);
  if (lb_magic != 0x00000801)
    throw std::runtime_error(labels_path + ": bad label magic " + std::to_string(lb_magic));
  const int ln = static_cast<int>(read_be32(lb, labels_path));
  if (ln != n)
    throw std::runtime_error(labels_path + ": " + std::to_string(ln) + " labels for " +
                             std::to_string(n) + " images");
  std::vector<unsigned char> raw(static_cast<size_t>(ln));
  lb.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!lb) throw std::runtime_error(labels_path + ": truncated");

  Dataset ds;
  ds.x = Tensor({n, h, w, 1});
  for (size_t i = 0; i < bytes.size(); ++i) ds.x.values[i] = bytes[i] / 255.0;
  ds.labels.reserve(raw.size());
  int max_label = 0;
  for (unsigned char v : raw) {
    ds.labels.push_back(v);
    max_label = std::max(max_label, static_cast<int>(v));
  }
  ds.class_count = max_label + 1;
  return ds;
}

void write_idx(const std::string& images_path, const std::string& labels_path,
               const Dataset& ds) {
  ds.validate();
  if (ds.x.rank() != 4 || ds.x.dim(3) != 1)
    throw std::invalid_argument("write_idx: dataset must hold [N,H,W,1] images");
  if (ds.class_count > 256)
    throw std::invalid_argument("write_idx: labels exceed one byte");
  std::ofstream im(images_path, std::ios::binary);
  if (!im) throw std::runtime_error("cannot write " + images_path);
  write_be32(im, 0x00000803);
  write_be32(im, static_cast<uint32_t>(ds.size()));
  write_be32(im, static_cast<uint32_t>(ds.x.dim(1)));
  write_be32(im, static_cast<uint32_t>(ds.x.dim(2)));
  for (double v : ds.x.values) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    im.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  if (!im) throw std::runtime_error("write failed: " + images_path);

  std::ofstream lb(labels_path, std::ios::binary);
  if (!lb) throw std::runtime_error("cannot write " + labels_path);
  write_be32(lb, 0x00000801);
  write_be32(lb, static_cast<uint32_t>(ds.size()));
  for (int y : ds.labels) lb.put(static_cast<char>(static_cast<unsigned char>(y)));
  if (!lb) throw std::runtime_error("write failed: " + labels_path);
}

SyntheticKind synthetic_kind_from(const std::string& name) {
  if (name == "blobs") return SyntheticKind::Blobs;
  if (name == "moons") return SyntheticKind::Moons;
  if (name == "hierarchical-blobs") return SyntheticKind::HierarchicalBlobs;
  throw std::invalid_argument("unknown synthetic dataset kind '" + name + "'");
}

Dataset make_synthetic(SyntheticKind kind, int classes, int n, double noise, uint64_t seed,
                       int subclasses) {
  if (classes < 2) throw std::invalid_argument("make_synthetic: need at least 2 classes");
  if (n < classes) throw std::invalid_argument("make_synthetic: need at least one sample per class");
  if (noise < 0.0) throw std::invalid_argument("make_synthetic: negative noise");
  Rng rng(mix_seed(seed, kSynthStream));
  constexpr double tau = 2.0 * std::numbers::pi;

  Dataset ds;
  ds.x = Tensor({n, 2});
  ds.labels.reserve(static_cast<size_t>(n));

  switch (kind) {
    case SyntheticKind::Blobs: {
      ds.class_count = classes;
      for (int i = 0; i < n; ++i) {
        const int c = i % classes;
        const double ang = tau * c / classes;
        ds.x.at(i, 0) = 4.0 * std::cos(ang) + noise * rng.normal();
        ds.x.at(i, 1) = 4.0 * std::sin(ang) + noise * rng.normal();
        ds.labels.push_back(c);
      }
      break;
    }
    case SyntheticKind::Moons: {
      if (classes != 2) throw std::invalid_argument("make_synthetic: moons needs exactly 2 classes");
      ds.class_count = 2;
      for (int i = 0; i < n; ++i) {
        const int c = i % 2;
        const double t = std::numbers::pi * rng.uniform();
        double px = std::cos(t) - 0.5;
        double py = std::sin(t) - 0.25;
        if (c == 1) {
          px = -px;
          py = -py;
        }
        ds.x.at(i, 0) = px + noise * rng.normal();
        ds.x.at(i, 1) = py + noise * rng.normal();
        ds.labels.push_back(c);
      }
      break;
    }
    case SyntheticKind::HierarchicalBlobs: {
      if (subclasses < 1)
        throw std::invalid_argument("make_synthetic: need at least 1 subclass per superclass");
      const int total = classes * subclasses;
      ds.class_count = total;
      ds.superclass.reserve(static_cast<size_t>(total));
      for (int c = 0; c < total; ++c) ds.superclass.push_back(c / subclasses);
      for (int i = 0; i < n; ++i) {
        const int c = i % total;
        const int s = c / subclasses;
        const int k = c % subclasses;
        const double sang = tau * s / classes;
        const double kang = tau * k / subclasses;
        ds.x.at(i, 0) = 4.0 * std::cos(sang) + 1.2 * std::cos(kang) + noise * rng.normal();
        ds.x.at(i, 1) = 4.0 * std::sin(sang) + 1.2 * std::sin(kang) + noise * rng.normal();
        ds.labels.push_back(c);
      }
      break;
    }
  }
  return ds;
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& ds, double test_frac, uint64_t seed) {
  ds.validate();
  if (!(test_frac > 0.0 && test_frac < 1.0))
    throw std::invalid_argument("split_holdout: fraction must lie in (0,1)");
  std::vector<int> order(static_cast<size_t>(ds.size()));
  for (int i = 0; i < ds.size(); ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(mix_seed(seed, kSplitStream, 0x7e57));
  order = sample_without_replacement(order, ds.size(), rng);
  const int test_n = static_cast<int>(std::floor(test_frac * ds.size() + 0.5));
  if (test_n < 1 || test_n >= ds.size())
    throw std::invalid_argument("split_holdout: fraction leaves an empty side");
  std::vector<int> test_idx(order.begin(), order.begin() + test_n);
  std::vector<int> train_idx(order.begin() + test_n, order.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  return {subset(ds, train_idx), subset(ds, test_idx)};
}

}  // namespace muscle
