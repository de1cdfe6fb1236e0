#include "qfc/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace qfc {

void require_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) throw ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

double json_number(const Json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number()) {
    throw ConfigError(where + "." + key + ": expected a number");
  }
  return it->get<double>();
}

std::size_t json_count(const Json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_number_integer() || it->get<long long>() < 0) {
    throw ConfigError(where + "." + key + ": expected a non-negative integer");
  }
  return it->get<std::size_t>();
}

std::string json_string(const Json& j, const char* key, const std::string& where) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string()) {
    throw ConfigError(where + "." + key + ": expected a string");
  }
  return it->get<std::string>();
}

Json to_json(const SystemModel& m) {
  Json j;
  j["mode"] = to_string(m.mode);
  j["epsilon"] = m.epsilon;
  j["kappa"] = m.kappa;
  j["eta"] = m.eta;
  j["omega"] = m.omega;
  j["g"] = m.g;
  j["rc_dim"] = m.rc_dim;
  return j;
}

SystemModel system_model_from_json(const Json& j, const std::string& where) {
  require_keys(j, {"mode", "epsilon", "kappa", "eta", "omega", "g", "rc_dim"}, where);
  SystemModel m;
  try {
    if (j.contains("mode")) m.mode = system_mode_from_string(json_string(j, "mode", where));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ".mode: " + e.what());
  }
  if (j.contains("epsilon")) m.epsilon = json_number(j, "epsilon", where);
  if (j.contains("kappa")) m.kappa = json_number(j, "kappa", where);
  if (j.contains("eta")) m.eta = json_number(j, "eta", where);
  if (j.contains("omega")) m.omega = json_number(j, "omega", where);
  if (j.contains("g")) m.g = json_number(j, "g", where);
  if (j.contains("rc_dim")) m.rc_dim = json_count(j, "rc_dim", where);
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return m;
}

Json to_json(const ControlGrid& g) {
  return Json{{"lambda_min", g.lambda_min}, {"lambda_max", g.lambda_max}, {"n_bins", g.n_bins}};
}

ControlGrid control_grid_from_json(const Json& j, const std::string& where) {
  require_keys(j, {"lambda_min", "lambda_max", "n_bins"}, where);
  ControlGrid g;
  if (j.contains("lambda_min")) g.lambda_min = json_number(j, "lambda_min", where);
  if (j.contains("lambda_max")) g.lambda_max = json_number(j, "lambda_max", where);
  if (j.contains("n_bins")) g.n_bins = json_count(j, "n_bins", where);
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  }
  return g;
}

Json to_json(const PureState& psi) {
  std::vector<double> re, im;
  for (Eigen::Index i = 0; i < psi.vec().size(); ++i) {
    re.push_back(psi.vec()(i).real());
    im.push_back(psi.vec()(i).imag());
  }
  return Json{{"re", re}, {"im", im}};
}

PureState pure_state_from_json(const Json& j, const std::string& where) {
  require_keys(j, {"re", "im"}, where);
  if (!j.contains("re") || !j["re"].is_array()) throw ConfigError(where + ".re: expected an array");
  const auto re = j["re"].get<std::vector<double>>();
  std::vector<double> im(re.size(), 0.0);
  if (j.contains("im")) im = j["im"].get<std::vector<double>>();
  if (re.empty() || im.size() != re.size()) {
    throw ConfigError(where + ": re and im must be non-empty and of equal length");
  }
  CVector v(static_cast<Eigen::Index>(re.size()));
  for (std::size_t i = 0; i < re.size(); ++i) v(static_cast<Eigen::Index>(i)) = Complex(re[i], im[i]);
  // Written coefficients such as 0.70710678 are unit-norm only to ~1e-8.
  if (std::abs(v.norm() - 1.0) > 1e-6) throw ConfigError(where + ": state is not normalized");
  // Already unit to rounding: keep the exact values so round trips are lossless.
  if (std::abs(v.norm() - 1.0) <= 1e-14) return PureState(v);
  return PureState::normalized(v);
}

}  // namespace qfc
