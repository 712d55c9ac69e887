#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedci/dedup.hpp"
#include "fedci/eval.hpp"
#include "fedci/predictor.hpp"
#include "fedci/rng.hpp"

namespace fedci::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json mat2_json(const Matrix2& m) { return json::array({{m(0, 0), m(0, 1)}, {m(1, 0), m(1, 1)}}); }

Matrix2 mat2_from(const json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_array() || j[0].size() != 2 || j[1].size() != 2) {
    throw Error(ErrorKind::InvalidConfig, "expected a 2x2 array of numbers");
  }
  Matrix2 m;
  m << j[0][0].get<double>(), j[0][1].get<double>(), j[1][0].get<double>(), j[1][1].get<double>();
  return m;
}

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw Error(ErrorKind::InvalidConfig, "unknown key '" + where + "." + k + "'");
  }
}

template <class T>
void read_if(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json_file(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaError, path.string() + ": " + e.what());
  }
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir.string() + ": " + ec.message());
}

json moments_json(const math::MomentVector& m) {
  const auto a = m.as_array();
  return json::array({a[0], a[1], a[2], a[3]});
}

math::MomentVector moments_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw Error(ErrorKind::SchemaError, "moment vector needs 4 entries");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

json summary_json(const SourceSummary& s) {
  json x = json::array();
  for (const auto& m : s.x_tilde) x.push_back(moments_json(m));
  return {{"x", x}, {"y0", moments_json(s.y0_tilde)}, {"y1", moments_json(s.y1_tilde)}, {"w", moments_json(s.w_tilde)}};
}

SourceSummary summary_from(const json& j) {
  SourceSummary s;
  for (const auto& m : j.at("x")) s.x_tilde.push_back(moments_from(m));
  s.y0_tilde = moments_from(j.at("y0"));
  s.y1_tilde = moments_from(j.at("y1"));
  s.w_tilde = moments_from(j.at("w"));
  return s;
}

std::vector<SourceData> load_sources(const std::vector<std::string>& paths) {
  if (paths.empty()) throw Error(ErrorKind::InvalidConfig, "no --sources given");
  std::vector<SourceData> out;
  for (std::size_t i = 0; i < paths.size(); ++i) out.push_back(data::load_csv(paths[i], static_cast<int>(i)));
  return out;
}

// Options every subcommand accepts. Flags land in optionals so that only the
// ones actually given override the config file.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::vector<std::string> sources;
};

struct Overrides {
  std::optional<std::string> variant;
  std::optional<int> rounds;
  std::optional<double> lr;
  std::optional<int> mc_samples;
  bool ablate_g = false;
  std::optional<std::string> transport;
  std::optional<std::string> optimizer;
  std::optional<int> draws;
  std::vector<std::string> parts;
  std::optional<int> k_keep;
};

RunConfig effective_config(const Common& c, const Overrides& o, const std::string& command) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::from_json(read_text(c.config));
  if (c.seed) cfg.seed = *c.seed;
  if (o.variant) cfg.data.variant = data::parse_variant(*o.variant);
  if (o.rounds) cfg.train.rounds = *o.rounds;
  if (o.lr) cfg.train.learning_rate = *o.lr;
  if (o.mc_samples) cfg.train.mc_samples = *o.mc_samples;
  if (o.ablate_g) cfg.train.ablate_g = true;
  if (o.transport) cfg.train.transport = parse_transport(*o.transport);
  if (o.optimizer) cfg.train.optimizer = parse_optimizer(*o.optimizer);
  if (o.draws) cfg.draws = *o.draws;
  if (!o.parts.empty()) {
    if (command == "train") {
      if (o.parts.size() != 1) throw Error(ErrorKind::InvalidConfig, "train takes a single --part");
      cfg.train_part = o.parts.front();
    } else {
      cfg.predict_parts = o.parts;
    }
  }
  if (o.k_keep) cfg.k_keep = *o.k_keep;
  cfg.data.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

void cmd_generate(const RunConfig& cfg, const fs::path& out_dir, std::ostream& out) {
  const auto sources = data::generate_synthetic(cfg.data);
  ensure_dir(out_dir);
  json files = json::array();
  for (const auto& s : sources) {
    const std::string name = "source_" + std::to_string(s.source_id) + ".csv";
    data::write_csv(out_dir / name, s);
    files.push_back(name);
  }
  const json manifest{{"variant", data::to_string(cfg.data.variant)},
                      {"seed", cfg.seed},
                      {"n", cfg.data.n},
                      {"m", cfg.data.m},
                      {"d_x", cfg.data.d_x},
                      {"files", files},
                      {"config_digest", cfg.digest()}};
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  out << "wrote " << sources.size() << " sources to " << out_dir.string() << "\n";
}

void cmd_dedup(const RunConfig& cfg, const std::vector<std::string>& paths, const fs::path& out_dir,
               std::ostream& out) {
  const auto sources = load_sources(paths);
  std::vector<DigestList> lists;
  for (const auto& s : sources) {
    if (s.keys.size() != static_cast<std::size_t>(s.size())) {
      throw Error(ErrorKind::SchemaError, "source " + std::to_string(s.source_id) + " has no id column");
    }
    lists.push_back(dedup::hash_keys(s.source_id, s.keys, cfg.salt));
  }
  const auto exclusions = dedup::match_and_assign(lists, cfg.k_keep, cfg.seed);
  ensure_dir(out_dir);
  json report = json::array();
  for (std::size_t i = 0; i < sources.size(); ++i) {
    const SourceData kept = dedup::apply_exclusions(sources[i], exclusions[i]);
    data::write_csv(out_dir / fs::path(paths[i]).filename(), kept);
    report.push_back({{"file", fs::path(paths[i]).filename().string()}, {"excluded_rows", exclusions[i].rows}});
    out << paths[i] << ": excluded " << exclusions[i].rows.size() << " of " << sources[i].size() << " rows\n";
  }
  write_text(out_dir / "exclusions.json", report.dump(2) + "\n");
}

void cmd_train(const RunConfig& cfg, const std::vector<std::string>& paths, const fs::path& out_dir,
               std::ostream& out) {
  const auto all = load_sources(paths);
  std::vector<SourceData> parts;
  std::vector<SourceSummary> summaries;
  for (const auto& s : all) {
    parts.push_back(select_part(s, cfg, cfg.train_part));
    summaries.push_back(data::summarize(parts.back()));
  }
  auto ctx = std::make_shared<const SharedContext>(summaries, cfg.priors, cfg.variational, cfg.train.ablate_g);
  const TrainResult res = train(parts, ctx, cfg.train);

  ensure_dir(out_dir);
  json sums = json::array();
  for (const auto& s : summaries) sums.push_back(summary_json(s));
  json ids = json::array();
  for (const auto& s : parts) ids.push_back(s.source_id);
  const json model{{"d_x", ctx->layout.d_x},
                   {"theta", std::vector<double>(res.theta.data(), res.theta.data() + res.theta.size())},
                   {"source_ids", ids},
                   {"summaries", sums},
                   {"ablate_g", cfg.train.ablate_g},
                   {"seed", cfg.seed},
                   {"config", json::parse(cfg.to_json())},
                   {"config_digest", cfg.digest()}};
  write_text(out_dir / "model.json", model.dump(2) + "\n");

  std::ostringstream trace;
  trace.precision(17);
  trace << "round,elbo,grad_norm,wall_s\n";
  for (const auto& e : res.trace.entries) {
    trace << e.round << ',' << e.elbo << ',' << e.grad_norm << ',' << e.wall_seconds << '\n';
  }
  write_text(out_dir / "trace.csv", trace.str());
  const auto& last = res.trace.entries.back();
  out << "trained " << res.trace.entries.size() << " rounds on " << parts.size() << " sources, final elbo "
      << last.elbo << "\n";
}

struct LoadedModel {
  Vector theta;
  std::shared_ptr<const SharedContext> ctx;
  std::string digest;
};

LoadedModel load_model(const fs::path& path) {
  const json j = parse_json_file(path);
  try {
    // Priors and variational settings come from the config the model was trained with.
    const RunConfig trained = RunConfig::from_json(j.at("config").dump());
    std::vector<SourceSummary> sums;
    for (const auto& s : j.at("summaries")) sums.push_back(summary_from(s));
    const auto theta = j.at("theta").get<std::vector<double>>();
    LoadedModel m;
    m.theta = Eigen::Map<const Vector>(theta.data(), static_cast<Eigen::Index>(theta.size()));
    m.ctx = std::make_shared<const SharedContext>(sums, trained.priors, trained.variational,
                                                  j.at("ablate_g").get<bool>());
    if (m.theta.size() != m.ctx->layout.size) throw Error(ErrorKind::SchemaError, "theta length differs from layout");
    m.digest = j.at("config_digest").get<std::string>();
    return m;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaError, path.string() + ": " + e.what());
  }
}

void cmd_predict(const RunConfig& cfg, const std::vector<std::string>& paths, const fs::path& model_path,
                 const fs::path& out_dir, std::ostream& out) {
  const auto all = load_sources(paths);
  const LoadedModel model = load_model(model_path);
  ensure_dir(out_dir);
  std::ostringstream effects;
  effects.precision(17);
  effects << "part,source,unit,ite_mean,ite_var\n";
  json parts = json::object();
  for (std::size_t pi = 0; pi < cfg.predict_parts.size(); ++pi) {
    const std::string& part = cfg.predict_parts[pi];
    std::vector<SourceData> sel;
    std::vector<std::vector<Eigen::Index>> rows(all.size());
    for (std::size_t s = 0; s < all.size(); ++s) sel.push_back(select_part(all[s], cfg, part, &rows[s]));
    const PredictiveDraws draws = predict_missing(sel, model.theta, model.ctx, cfg.draws, predict_seed(cfg.seed));
    const EffectEstimate est = estimate_effects(sel, draws);
    for (std::size_t s = 0; s < sel.size(); ++s) {
      for (Eigen::Index i = 0; i < sel[s].size(); ++i) {
        effects << part << ',' << s << ',' << rows[s][static_cast<std::size_t>(i)] << ',' << est.ite_mean[s][i]
                << ',' << est.ite_var[s][i] << '\n';
      }
    }
    json per_source = json::array();
    for (std::size_t s = 0; s < sel.size(); ++s) {
      const Histogram h = ate_distribution(ate_draws(sel, draws, {s}));
      per_source.push_back({{"ate_mean", h.mean}, {"ate_sd", h.sd}});
    }
    const Histogram h = ate_distribution(est.ate_draws);
    parts[part] = {{"ate_mean", est.ate_mean},
                   {"ate_var", est.ate_var},
                   {"ate_sd", h.sd},
                   {"interval", est.interval},
                   {"per_source", per_source}};
    if (pi == 0) write_histogram_csv(out_dir / "hist.csv", h);
    out << part << ": ATE " << est.ate_mean << " [" << est.interval[0] << ", " << est.interval[1] << "]\n";
  }
  write_text(out_dir / "effects.csv", effects.str());
  const json ate{{"parts", parts}, {"draws", cfg.draws}, {"seed", cfg.seed}, {"config_digest", model.digest}};
  write_text(out_dir / "ate.json", ate.dump(2) + "\n");
}

struct EffectRow {
  std::size_t source;
  Eigen::Index unit;
  double ite_mean;
};

std::map<std::string, std::vector<EffectRow>> read_effects(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  if (line != "part,source,unit,ite_mean,ite_var") throw Error(ErrorKind::SchemaError, path.string() + ": bad header");
  std::map<std::string, std::vector<EffectRow>> out;
  for (long n = 2; std::getline(in, line); ++n) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 5) throw Error(ErrorKind::SchemaError, path.string() + ": line " + std::to_string(n));
    try {
      out[f[0]].push_back({std::stoul(f[1]), std::stol(f[2]), std::stod(f[3])});
    } catch (const std::exception&) {
      throw Error(ErrorKind::SchemaError, path.string() + ": line " + std::to_string(n));
    }
  }
  return out;
}

void cmd_evaluate(const RunConfig& cfg, const std::vector<std::string>& paths, const fs::path& pred_dir,
                  const fs::path& trace_path, const fs::path& out_dir, const fs::path& csv_path, std::ostream& out) {
  const auto all = load_sources(paths);
  const auto effects = read_effects(pred_dir / "effects.csv");
  const json ate = parse_json_file(pred_dir / "ate.json");
  if (effects.empty()) throw Error(ErrorKind::SchemaError, "no effects to evaluate");

  eval::MetricsReport report;
  for (const auto& [part, rows] : effects) {
    std::vector<Vector> truth(all.size()), est(all.size());
    std::vector<std::vector<double>> t(all.size()), e(all.size());
    for (const auto& r : rows) {
      if (r.source >= all.size() || r.unit < 0 || r.unit >= all[r.source].size()) {
        throw Error(ErrorKind::IndexOutOfRange, "effect row outside source " + std::to_string(r.source));
      }
      const auto& src = all[r.source];
      if (!src.truth) throw Error(ErrorKind::MissingTruth, paths[r.source] + " has no y0/y1 columns");
      t[r.source].push_back(src.truth->y1[r.unit] - src.truth->y0[r.unit]);
      e[r.source].push_back(r.ite_mean);
    }
    double ite_sum = 0.0, n = 0.0;
    for (std::size_t s = 0; s < all.size(); ++s) {
      truth[s] = Eigen::Map<const Vector>(t[s].data(), static_cast<Eigen::Index>(t[s].size()));
      est[s] = Eigen::Map<const Vector>(e[s].data(), static_cast<Eigen::Index>(e[s].size()));
      ite_sum += truth[s].sum();
      n += static_cast<double>(t[s].size());
    }
    double ate_mean = 0.0;
    try {
      ate_mean = ate.at("parts").at(part).at("ate_mean").get<double>();
    } catch (const json::exception&) {
      throw Error(ErrorKind::SchemaError, "ate.json lacks part '" + part + "'");
    }
    report.per_split[part] = {eval::pehe(truth, est).sqrt_eps, eval::ate_error(ite_sum / n, ate_mean)};
  }
  const auto head = report.per_split.count(cfg.headline) ? report.per_split.find(cfg.headline)
                                                         : report.per_split.begin();
  report.sqrt_pehe = head->second.sqrt_pehe;
  report.ate_error = head->second.ate_error;
  report.seed = cfg.seed;
  report.variant = data::to_string(cfg.data.variant);
  report.m_used = static_cast<int>(all.size());
  report.config_digest = ate.value("config_digest", "");
  if (!trace_path.empty()) {
    // Training wall time: last column of the final trace row.
    std::istringstream in(read_text(trace_path));
    std::string line, last;
    while (std::getline(in, line))
      if (!line.empty()) last = line;
    const auto comma = last.rfind(',');
    try {
      report.wall_s = std::stod(last.substr(comma + 1));
    } catch (const std::exception&) {
      throw Error(ErrorKind::SchemaError, trace_path.string() + ": cannot read wall time");
    }
  }
  ensure_dir(out_dir);
  eval::emit_report(report, out_dir / "metrics.json", csv_path);
  out << "sqrt_pehe " << report.sqrt_pehe << " ate_error " << report.ate_error << " (" << head->first << ")\n";
}

}  // namespace

void RunConfig::validate() const {
  data.validate();
  try {
    priors.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("priors: ") + e.what());
  }
  variational.validate();
  train.validate();
  if (draws < 1) throw Error(ErrorKind::InvalidConfig, "draws must be positive");
  if (k_keep < 1) throw Error(ErrorKind::InvalidConfig, "k_keep must be positive");
  if (predict_parts.empty()) throw Error(ErrorKind::InvalidConfig, "predict needs at least one part");
  for (const auto& p : predict_parts) {
    if (p != "all" && p != "train" && p != "test" && p != "val") {
      throw Error(ErrorKind::InvalidConfig, "unknown part '" + p + "'");
    }
  }
  if (train_part != "all" && train_part != "train" && train_part != "test" && train_part != "val") {
    throw Error(ErrorKind::InvalidConfig, "unknown part '" + train_part + "'");
  }
}

std::string RunConfig::to_json() const {
  const json j{
      {"seed", seed},
      {"data",
       {{"variant", data::to_string(data.variant)},
        {"n", data.n},
        {"m", data.m},
        {"d_x", data.d_x},
        {"split", {{"train", data.split.train}, {"test", data.split.test}, {"val", data.split.val}}}}},
      {"priors", {{"v0", mat2_json(priors.v0)}, {"s0", mat2_json(priors.s0)}, {"d0", priors.d0}, {"n0", priors.n0}}},
      {"variational", {{"d_q", variational.d_q}, {"n_q", variational.n_q}, {"jitter", variational.jitter}}},
      {"train",
       {{"part", train_part},
        {"learning_rate", train.learning_rate},
        {"rounds", train.rounds},
        {"mc_samples", train.mc_samples},
        {"optimizer", to_string(train.optimizer)},
        {"ablate_g", train.ablate_g},
        {"transport", to_string(train.transport)},
        {"fixed_noise", train.fixed_noise},
        {"gradient", to_string(train.gradient)},
        {"grad_norm_stop", train.grad_norm_stop}}},
      {"predict", {{"draws", draws}, {"parts", predict_parts}}},
      {"dedup", {{"k_keep", k_keep}, {"salt", salt}}},
      {"eval", {{"headline", headline}}}};
  return j.dump();
}

std::string RunConfig::digest() const { return dedup::sha256_hex(to_json()); }

RunConfig RunConfig::from_json(const std::string& text) {
  RunConfig cfg;
  try {
    const json j = json::parse(text);
    check_keys(j, "config", {"seed", "data", "priors", "variational", "train", "predict", "dedup", "eval"});
    read_if(j, "seed", cfg.seed);
    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d, "data", {"variant", "n", "m", "d_x", "split"});
      if (d.contains("variant")) cfg.data.variant = data::parse_variant(d.at("variant").get<std::string>());
      read_if(d, "n", cfg.data.n);
      read_if(d, "m", cfg.data.m);
      read_if(d, "d_x", cfg.data.d_x);
      if (d.contains("split")) {
        const json& s = d.at("split");
        check_keys(s, "data.split", {"train", "test", "val"});
        read_if(s, "train", cfg.data.split.train);
        read_if(s, "test", cfg.data.split.test);
        read_if(s, "val", cfg.data.split.val);
      }
    }
    if (j.contains("priors")) {
      const json& p = j.at("priors");
      check_keys(p, "priors", {"v0", "s0", "d0", "n0"});
      if (p.contains("v0")) cfg.priors.v0 = mat2_from(p.at("v0"));
      if (p.contains("s0")) cfg.priors.s0 = mat2_from(p.at("s0"));
      read_if(p, "d0", cfg.priors.d0);
      read_if(p, "n0", cfg.priors.n0);
    }
    if (j.contains("variational")) {
      const json& v = j.at("variational");
      check_keys(v, "variational", {"d_q", "n_q", "jitter"});
      read_if(v, "d_q", cfg.variational.d_q);
      read_if(v, "n_q", cfg.variational.n_q);
      read_if(v, "jitter", cfg.variational.jitter);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      check_keys(t, "train", {"part", "learning_rate", "rounds", "mc_samples", "optimizer", "ablate_g", "transport",
                              "fixed_noise", "gradient", "grad_norm_stop"});
      read_if(t, "part", cfg.train_part);
      read_if(t, "learning_rate", cfg.train.learning_rate);
      read_if(t, "rounds", cfg.train.rounds);
      read_if(t, "mc_samples", cfg.train.mc_samples);
      if (t.contains("optimizer")) cfg.train.optimizer = parse_optimizer(t.at("optimizer").get<std::string>());
      read_if(t, "ablate_g", cfg.train.ablate_g);
      if (t.contains("transport")) cfg.train.transport = parse_transport(t.at("transport").get<std::string>());
      read_if(t, "fixed_noise", cfg.train.fixed_noise);
      if (t.contains("gradient")) cfg.train.gradient = parse_gradient_method(t.at("gradient").get<std::string>());
      read_if(t, "grad_norm_stop", cfg.train.grad_norm_stop);
    }
    if (j.contains("predict")) {
      const json& p = j.at("predict");
      check_keys(p, "predict", {"draws", "parts"});
      read_if(p, "draws", cfg.draws);
      read_if(p, "parts", cfg.predict_parts);
    }
    if (j.contains("dedup")) {
      const json& d = j.at("dedup");
      check_keys(d, "dedup", {"k_keep", "salt"});
      read_if(d, "k_keep", cfg.k_keep);
      read_if(d, "salt", cfg.salt);
    }
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      check_keys(e, "eval", {"headline"});
      read_if(e, "headline", cfg.headline);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, e.what());
  }
  cfg.data.seed = cfg.seed;
  cfg.train.seed = cfg.seed;
  return cfg;
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::IoError:
      return 2;
    case ErrorKind::NotPositiveDefinite:
    case ErrorKind::NonFiniteLoss:
    case ErrorKind::NonFiniteParameters:
    case ErrorKind::WorkerFailure:
    case ErrorKind::MissingReport:
    case ErrorKind::RoundMismatch:
      return 1;
    default:
      return 3;
  }
}

std::uint64_t predict_seed(std::uint64_t seed) { return derive_seed(seed, 0x7072656469637400ULL); }

SourceData select_part(const SourceData& src, const RunConfig& cfg, const std::string& part,
                       std::vector<Eigen::Index>* rows) {
  if (part == "all") {
    if (rows) {
      rows->resize(static_cast<std::size_t>(src.size()));
      std::iota(rows->begin(), rows->end(), 0);
    }
    return src;
  }
  const data::Split split = data::split_source(src, cfg.data.split, cfg.seed);
  if (rows) {
    if (part == "train") *rows = split.train;
    else if (part == "test") *rows = split.test;
    else if (part == "val") *rows = split.val;
  }
  return data::select(src, split, part);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated causal inference with Gaussian processes", "fedci"};
  app.require_subcommand(1);
  Common common;
  Overrides ov;
  std::string model_path, pred_dir, trace_path, csv_path;

  auto add_common = [&](CLI::App* sub, bool with_sources) {
    sub->add_option("--config", common.config, "JSON config file");
    sub->add_option("--seed", common.seed, "Seed for every random stream");
    sub->add_option("--out", common.out, "Output directory");
    if (with_sources) sub->add_option("--sources", common.sources, "Per-source CSV files")->required();
  };

  auto* gen = app.add_subcommand("generate", "Write synthetic sources and a manifest");
  add_common(gen, false);
  gen->add_option("--variant", ov.variant, "data1 or data2");

  auto* dd = app.add_subcommand("dedup", "Hash primary keys and drop rows held by too many sources");
  add_common(dd, true);
  dd->add_option("--k-keep", ov.k_keep, "Sources allowed to keep each duplicated record");

  auto* tr = app.add_subcommand("train", "Federated variational training");
  add_common(tr, true);
  tr->add_option("--rounds", ov.rounds, "Communication rounds");
  tr->add_option("--lr", ov.lr, "Learning rate");
  tr->add_option("--mc-samples", ov.mc_samples, "Monte Carlo bundles per round");
  tr->add_flag("--ablate-g", ov.ablate_g, "Drop the shared latent across sources");
  tr->add_option("--transport", ov.transport, "inproc or tcp");
  tr->add_option("--optimizer", ov.optimizer, "sgd or adam");
  tr->add_option("--part", ov.parts, "Rows to train on: train, test, val or all");

  auto* pr = app.add_subcommand("predict", "Impute missing outcomes and estimate effects");
  add_common(pr, true);
  pr->add_option("--model", model_path, "model.json written by train")->required();
  pr->add_option("--draws", ov.draws, "Predictive draws");
  pr->add_option("--part", ov.parts, "Rows to predict: train, test, val or all (repeatable)");

  auto* ev = app.add_subcommand("evaluate", "Compare estimates with ground truth");
  add_common(ev, true);
  ev->add_option("--pred", pred_dir, "Directory with effects.csv and ate.json")->required();
  ev->add_option("--trace", trace_path, "trace.csv, for the training wall time");
  ev->add_option("--csv", csv_path, "CSV file to append one row to");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 3;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    const RunConfig cfg = effective_config(common, ov, name);
    if (name == "generate") cmd_generate(cfg, common.out, out);
    else if (name == "dedup") cmd_dedup(cfg, common.sources, common.out, out);
    else if (name == "train") cmd_train(cfg, common.sources, common.out, out);
    else if (name == "predict") cmd_predict(cfg, common.sources, model_path, common.out, out);
    else cmd_evaluate(cfg, common.sources, pred_dir, trace_path, common.out, csv_path, out);
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace fedci::cli
