#include "fedci/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "fedci/error.hpp"
#include "fedci/rng.hpp"

namespace fedci::data {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim_cr(std::string s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
  return s;
}

double parse_double(const std::string& cell, const std::filesystem::path& path, std::size_t row,
                    const std::string& column) {
  double v = 0.0;
  const char* begin = cell.data();
  const char* end = begin + cell.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw Error(ErrorKind::SchemaError, path.string() + " row " + std::to_string(row) + " column '" + column +
                                            "': cannot parse '" + cell + "' as a number");
  }
  return v;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

math::MomentVector arm_moments(const SourceData& src, double arm) {
  std::vector<double> ys;
  for (Eigen::Index i = 0; i < src.size(); ++i) {
    if (src.w[i] == arm) ys.push_back(src.y_obs[i]);
  }
  if (ys.size() < 2) {
    std::clog << "warning: source " << src.source_id << " has " << ys.size() << (arm == 1.0 ? " treated" : " control")
              << " unit(s); using zero moments for that arm\n";
    return {};
  }
  return math::moments4(ys);
}

}  // namespace

Variant parse_variant(const std::string& name) {
  if (name == "data1") return Variant::Data1;
  if (name == "data2") return Variant::Data2;
  throw Error(ErrorKind::InvalidConfig, "unknown variant '" + name + "' (expected data1 or data2)");
}

std::string to_string(Variant v) { return v == Variant::Data1 ? "data1" : "data2"; }

void SyntheticConfig::validate() const {
  if (m < 1 || n < 1 || d_x < 1) throw Error(ErrorKind::InvalidConfig, "n, m and d_x must be positive");
  if (n % m != 0) {
    throw Error(ErrorKind::InvalidConfig, "n=" + std::to_string(n) + " is not divisible by m=" + std::to_string(m));
  }
  if (split.train < 0 || split.test < 0 || split.val < 0 || split.total() > per_source()) {
    throw Error(ErrorKind::InvalidConfig, "split counts exceed the " + std::to_string(per_source()) +
                                              " records per source");
  }
}

SyntheticTruthParams draw_truth_params(const SyntheticConfig& cfg) {
  std::mt19937_64 rng(derive_seed(cfg.seed, 0));
  std::normal_distribution<double> z;
  const double sd = std::sqrt(2.0);
  SyntheticTruthParams p;
  p.a0 = 0.6;
  p.b0 = 0.9;
  p.c0 = 2.0;
  double b1_mean = 0.0, c1_mean = 1.0;
  if (cfg.variant == Variant::Data2) {
    p.b0 = 6.0;
    p.c0 = 30.0;
    b1_mean = 10.0;
    c1_mean = 15.0;
  }
  p.a1.resize(cfg.d_x);
  p.b1.resize(cfg.d_x);
  p.c1.resize(cfg.d_x);
  for (Eigen::Index j = 0; j < cfg.d_x; ++j) p.a1[j] = sd * z(rng);
  for (Eigen::Index j = 0; j < cfg.d_x; ++j) p.b1[j] = b1_mean + sd * z(rng);
  for (Eigen::Index j = 0; j < cfg.d_x; ++j) p.c1[j] = c1_mean + sd * z(rng);
  return p;
}

std::vector<SourceData> generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  const SyntheticTruthParams p = draw_truth_params(cfg);
  const Eigen::Index ns = cfg.per_source();
  std::vector<SourceData> out;
  for (Eigen::Index s = 0; s < cfg.m; ++s) {
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(s) + 1));
    std::uniform_real_distribution<double> ux(-1.0, 1.0);
    std::uniform_real_distribution<double> uw(0.0, 1.0);
    std::normal_distribution<double> z;
    SourceData src;
    src.source_id = static_cast<int>(s);
    src.x.resize(ns, cfg.d_x);
    src.w.resize(ns);
    src.y_obs.resize(ns);
    src.truth = GroundTruth{Vector(ns), Vector(ns)};
    for (Eigen::Index i = 0; i < ns; ++i) {
      for (Eigen::Index j = 0; j < cfg.d_x; ++j) src.x(i, j) = ux(rng);
      const Vector xi = src.x.row(i).transpose();
      const double w = uw(rng) < sigmoid(p.a0 + xi.dot(p.a1)) ? 1.0 : 0.0;
      // Potential outcomes depend on x only, never on w.
      const double y0 = softplus(p.b0 + xi.dot(p.b1)) + p.sigma0 * z(rng);
      const double y1 = softplus(p.c0 + xi.dot(p.c1)) + p.sigma1 * z(rng);
      src.w[i] = w;
      src.truth->y0[i] = y0;
      src.truth->y1[i] = y1;
      src.y_obs[i] = w == 1.0 ? y1 : y0;
      src.keys.push_back(std::to_string(cfg.seed) + "-" + std::to_string(s * ns + i));
    }
    out.push_back(std::move(src));
  }
  return out;
}

Split split_source(const SourceData& src, const SplitCounts& counts, std::uint64_t seed) {
  if (counts.train < 0 || counts.test < 0 || counts.val < 0 || counts.total() > src.size()) {
    throw Error(ErrorKind::InvalidConfig, "split counts " + std::to_string(counts.train) + "/" +
                                              std::to_string(counts.test) + "/" + std::to_string(counts.val) +
                                              " exceed source of size " + std::to_string(src.size()));
  }
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(src.size()));
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(src.source_id) + 1000));
  std::shuffle(perm.begin(), perm.end(), rng);
  Split out;
  auto it = perm.begin();
  out.train.assign(it, it + counts.train);
  it += counts.train;
  out.test.assign(it, it + counts.test);
  it += counts.test;
  out.val.assign(it, it + counts.val);
  return out;
}

SourceData select(const SourceData& src, const Split& split, const std::string& part) {
  if (part == "train") return src.subset(split.train);
  if (part == "test") return src.subset(split.test);
  if (part == "val") return src.subset(split.val);
  throw Error(ErrorKind::InvalidConfig, "unknown split part '" + part + "'");
}

SourceData load_csv(const std::filesystem::path& path, int source_id) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::SchemaError, path.string() + ": empty file");
  const std::vector<std::string> header = split_line(trim_cr(line));

  int col_id = -1, col_w = -1, col_y = -1, col_y0 = -1, col_y1 = -1;
  std::vector<int> col_x;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    const std::string& h = header[static_cast<std::size_t>(c)];
    if (h == "id") col_id = c;
    else if (h == "w") col_w = c;
    else if (h == "y_obs") col_y = c;
    else if (h == "y0") col_y0 = c;
    else if (h == "y1") col_y1 = c;
    else if (h.size() > 1 && h[0] == 'x') {
      int idx = 0;
      auto [ptr, ec] = std::from_chars(h.data() + 1, h.data() + h.size(), idx);
      if (ec != std::errc() || ptr != h.data() + h.size() || idx != static_cast<int>(col_x.size()) + 1) {
        throw Error(ErrorKind::SchemaError, path.string() + ": covariate column '" + h + "' out of order");
      }
      col_x.push_back(c);
    } else {
      throw Error(ErrorKind::SchemaError, path.string() + ": unknown column '" + h + "'");
    }
  }
  if (col_w < 0 || col_y < 0) throw Error(ErrorKind::SchemaError, path.string() + ": missing w or y_obs column");
  if ((col_y0 < 0) != (col_y1 < 0)) {
    throw Error(ErrorKind::SchemaError, path.string() + ": y0 and y1 must appear together");
  }
  if (col_x.empty()) throw Error(ErrorKind::SchemaError, path.string() + ": no covariate columns");

  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    line = trim_cr(line);
    if (line.empty()) continue;
    rows.push_back(split_line(line));
    if (rows.back().size() != header.size()) {
      throw Error(ErrorKind::SchemaError, path.string() + " row " + std::to_string(rows.size()) + ": expected " +
                                              std::to_string(header.size()) + " fields, got " +
                                              std::to_string(rows.back().size()));
    }
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  SourceData src;
  src.source_id = source_id;
  src.w.resize(n);
  src.y_obs.resize(n);
  src.x.resize(n, static_cast<Eigen::Index>(col_x.size()));
  if (col_y0 >= 0) src.truth = GroundTruth{Vector(n), Vector(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    const auto row = static_cast<std::size_t>(i) + 1;
    const double w = parse_double(r[static_cast<std::size_t>(col_w)], path, row, "w");
    if (w != 0.0 && w != 1.0) {
      throw Error(ErrorKind::NonBinaryTreatment,
                  path.string() + " row " + std::to_string(row) + ": w=" + r[static_cast<std::size_t>(col_w)]);
    }
    src.w[i] = w;
    src.y_obs[i] = parse_double(r[static_cast<std::size_t>(col_y)], path, row, "y_obs");
    if (src.truth) {
      src.truth->y0[i] = parse_double(r[static_cast<std::size_t>(col_y0)], path, row, "y0");
      src.truth->y1[i] = parse_double(r[static_cast<std::size_t>(col_y1)], path, row, "y1");
    }
    for (std::size_t j = 0; j < col_x.size(); ++j) {
      src.x(i, static_cast<Eigen::Index>(j)) =
          parse_double(r[static_cast<std::size_t>(col_x[j])], path, row, header[static_cast<std::size_t>(col_x[j])]);
    }
    if (col_id >= 0) src.keys.push_back(r[static_cast<std::size_t>(col_id)]);
  }
  return src;
}

void write_csv(const std::filesystem::path& path, const SourceData& src) {
  src.validate();
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  const bool with_id = !src.keys.empty();
  if (with_id) out << "id,";
  out << "w,y_obs";
  if (src.truth) out << ",y0,y1";
  for (Eigen::Index j = 0; j < src.covariate_dim(); ++j) out << ",x" << j + 1;
  out << '\n';
  for (Eigen::Index i = 0; i < src.size(); ++i) {
    if (with_id) out << src.keys[static_cast<std::size_t>(i)] << ',';
    out << (src.w[i] == 1.0 ? "1" : "0") << ',' << format_double(src.y_obs[i]);
    if (src.truth) out << ',' << format_double(src.truth->y0[i]) << ',' << format_double(src.truth->y1[i]);
    for (Eigen::Index j = 0; j < src.covariate_dim(); ++j) out << ',' << format_double(src.x(i, j));
    out << '\n';
  }
  if (!out) throw Error(ErrorKind::IoError, "failed writing " + path.string());
}

SourceSummary summarize(const SourceData& src) {
  src.validate();
  if (src.size() < 2) {
    throw Error(ErrorKind::InsufficientData, "source " + std::to_string(src.source_id) + " has fewer than 2 rows");
  }
  SourceSummary s;
  std::vector<double> col(static_cast<std::size_t>(src.size()));
  for (Eigen::Index j = 0; j < src.covariate_dim(); ++j) {
    for (Eigen::Index i = 0; i < src.size(); ++i) col[static_cast<std::size_t>(i)] = src.x(i, j);
    s.x_tilde.push_back(math::moments4(col));
  }
  s.y0_tilde = arm_moments(src, 0.0);
  s.y1_tilde = arm_moments(src, 1.0);
  s.w_tilde = math::moments4(std::span<const double>(src.w.data(), static_cast<std::size_t>(src.size())));
  return s;
}

double treated_fraction(const SourceData& src) {
  if (src.size() == 0) return 0.0;
  return src.w.sum() / static_cast<double>(src.size());
}

}  // namespace fedci::data
