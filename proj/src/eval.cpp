#include "fedci/eval.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "fedci/error.hpp"

namespace fedci::eval {

using nlohmann::json;

Pehe pehe(const std::vector<Vector>& true_ite, const std::vector<Vector>& est_ite) {
  if (true_ite.size() != est_ite.size()) {
    throw Error(ErrorKind::ShapeMismatch, std::to_string(true_ite.size()) + " true sources vs " +
                                              std::to_string(est_ite.size()) + " estimated");
  }
  double ss = 0.0;
  double n = 0.0;
  for (std::size_t s = 0; s < true_ite.size(); ++s) {
    if (true_ite[s].size() != est_ite[s].size()) {
      throw Error(ErrorKind::ShapeMismatch, "source " + std::to_string(s) + ": " +
                                                std::to_string(true_ite[s].size()) + " true units vs " +
                                                std::to_string(est_ite[s].size()) + " estimated");
    }
    ss += (true_ite[s] - est_ite[s]).squaredNorm();
    n += static_cast<double>(true_ite[s].size());
  }
  if (n == 0.0) throw Error(ErrorKind::InsufficientData, "no units to evaluate");
  Pehe out;
  out.eps = ss / n;
  out.sqrt_eps = std::sqrt(out.eps);
  return out;
}

double ate_error(double true_ate, double est_ate) { return std::abs(true_ate - est_ate); }

Vector true_ite(const SourceData& src) {
  if (!src.truth) throw Error(ErrorKind::MissingTruth, "source " + std::to_string(src.source_id) + " has no y0/y1");
  return src.truth->y1 - src.truth->y0;
}

double true_ate(const std::vector<SourceData>& sources) {
  double sum = 0.0, n = 0.0;
  for (const auto& s : sources) {
    sum += true_ite(s).sum();
    n += static_cast<double>(s.size());
  }
  if (n == 0.0) throw Error(ErrorKind::InsufficientData, "no units");
  return sum / n;
}

void emit_report(const MetricsReport& r, const std::filesystem::path& json_path,
                 const std::filesystem::path& csv_path) {
  json j;
  j["sqrt_pehe"] = r.sqrt_pehe;
  j["ate_error"] = r.ate_error;
  j["seed"] = r.seed;
  j["variant"] = r.variant;
  j["m_used"] = r.m_used;
  j["wall_s"] = r.wall_s;
  j["config_digest"] = r.config_digest;
  j["per_split"] = json::object();
  for (const auto& [name, m] : r.per_split) {
    j["per_split"][name] = {{"sqrt_pehe", m.sqrt_pehe}, {"ate_error", m.ate_error}};
  }
  {
    std::ofstream out(json_path);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + json_path.string());
    out << j.dump(2) << '\n';
    if (!out) throw Error(ErrorKind::IoError, "failed writing " + json_path.string());
  }
  if (csv_path.empty()) return;
  const bool fresh = !std::filesystem::exists(csv_path);
  std::ofstream csv(csv_path, std::ios::app);
  if (!csv) throw Error(ErrorKind::IoError, "cannot append to " + csv_path.string());
  csv.precision(17);
  if (fresh) csv << "seed,variant,m_used,sqrt_pehe,ate_error,wall_s\n";
  csv << r.seed << ',' << r.variant << ',' << r.m_used << ',' << r.sqrt_pehe << ',' << r.ate_error << ','
      << r.wall_s << '\n';
  if (!csv) throw Error(ErrorKind::IoError, "failed writing " + csv_path.string());
}

MetricsReport read_report(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + json_path.string());
  try {
    const json j = json::parse(in);
    MetricsReport r;
    r.sqrt_pehe = j.at("sqrt_pehe").get<double>();
    r.ate_error = j.at("ate_error").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.variant = j.at("variant").get<std::string>();
    r.m_used = j.at("m_used").get<int>();
    r.wall_s = j.at("wall_s").get<double>();
    r.config_digest = j.at("config_digest").get<std::string>();
    for (const auto& [name, m] : j.at("per_split").items()) {
      r.per_split[name] = {m.at("sqrt_pehe").get<double>(), m.at("ate_error").get<double>()};
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaError, json_path.string() + ": " + e.what());
  }
}

MeanSe mean_se(const std::vector<double>& values) {
  if (values.empty()) throw Error(ErrorKind::InsufficientData, "no values to aggregate");
  const double n = static_cast<double>(values.size());
  MeanSe out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) return out;
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.se = std::sqrt(ss / (n - 1.0) / n);
  return out;
}

}  // namespace fedci::eval
