#include "fedci/messages.hpp"

#include <cmath>

#include <json.hpp>

#include "fedci/error.hpp"

namespace fedci {

namespace {

using nlohmann::json;

json vec_to_json(const math::Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

math::Vector vec_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorKind::SchemaError, "expected a numeric array");
  math::Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorKind::SchemaError, "non-numeric entry in array");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

// Non-finite doubles have no JSON form; nlohmann would write null.
void require_finite(const math::Vector& v, const char* what) {
  if (!v.allFinite()) throw Error(ErrorKind::NonFiniteParameters, std::string(what) + " has non-finite entries");
}

struct Encoder {
  json operator()(const ParamBroadcast& m) const {
    require_finite(m.theta, "broadcast theta");
    return {{"type", "broadcast"}, {"round", m.round}, {"theta", vec_to_json(m.theta)}, {"noise_seed", m.noise_seed}};
  }
  json operator()(const GradientReport& m) const {
    require_finite(m.grad, "gradient");
    return {{"type", "grad"},
            {"round", m.round},
            {"source_id", m.source_id},
            {"grad", vec_to_json(m.grad)},
            {"elbo", m.elbo_value}};
  }
  json operator()(const WorkerError& m) const {
    return {{"type", "error"},
            {"round", m.round},
            {"source_id", m.source_id},
            {"kind", m.kind},
            {"message", m.message}};
  }
  json operator()(const Shutdown&) const { return {{"type", "shutdown"}}; }
  json operator()(const DigestList& m) const {
    return {{"type", "digests"}, {"source_id", m.source_id}, {"digests", m.digests}};
  }
  json operator()(const ExclusionList& m) const {
    return {{"type", "exclude"}, {"source_id", m.source_id}, {"rows", m.rows}};
  }
};

}  // namespace

std::string encode(const Message& msg) { return std::visit(Encoder{}, msg).dump(); }

Message decode(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaError, std::string("malformed message: ") + e.what());
  }
  try {
    const std::string type = j.at("type").get<std::string>();
    if (type == "broadcast") {
      return ParamBroadcast{j.at("round").get<std::int64_t>(), vec_from_json(j.at("theta")),
                            j.at("noise_seed").get<std::uint64_t>()};
    }
    if (type == "grad") {
      return GradientReport{j.at("source_id").get<int>(), j.at("round").get<std::int64_t>(),
                            vec_from_json(j.at("grad")), j.at("elbo").get<double>()};
    }
    if (type == "error") {
      return WorkerError{j.at("source_id").get<int>(), j.at("round").get<std::int64_t>(),
                         j.at("kind").get<std::string>(), j.at("message").get<std::string>()};
    }
    if (type == "shutdown") return Shutdown{};
    if (type == "digests") {
      return DigestList{j.at("source_id").get<int>(), j.at("digests").get<std::vector<std::string>>()};
    }
    if (type == "exclude") {
      return ExclusionList{j.at("source_id").get<int>(), j.at("rows").get<std::vector<Eigen::Index>>()};
    }
    throw Error(ErrorKind::SchemaError, "unknown message type '" + type + "'");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::SchemaError, std::string("bad message field: ") + e.what());
  }
}

}  // namespace fedci
