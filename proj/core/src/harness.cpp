#include "cara/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "cara/errors.hpp"
#include "cara/random.hpp"
#include "cara/serialization.hpp"

#ifndef CARA_VERSION
#define CARA_VERSION "0.0.0"
#endif

namespace cara {

std::string_view tool_version() noexcept { return CARA_VERSION; }

TrialOptions ExperimentConfig::trial_options() const {
  TrialOptions options;
  options.horizon = n;
  options.m0 = m0;
  options.estimation = estimation;
  options.trajectory_stride = 1;
  return options;
}

// ---------------------------------------------------------------------------
// Config parsing
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string indexed(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

const char* type_name(const json& j) { return j.type_name(); }

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) {
    throw ConfigError(path, std::string("expected an object, got ") + type_name(j));
  }
}

void allow_keys(const json& j, const std::string& path, std::initializer_list<std::string_view> keys) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      std::string list;
      for (auto k : keys) list += (list.empty() ? "" : ", ") + std::string(k);
      throw ConfigError(join(path, key), "unknown key (expected one of: " + list + ")");
    }
  }
}

const json& required(const json& j, const std::string& path, const char* key) {
  if (!j.contains(key)) throw ConfigError(join(path, key), "missing required key");
  return j.at(key);
}

double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, std::string("expected a number, got ") + type_name(j));
  const double value = j.get<double>();
  if (!std::isfinite(value)) throw ConfigError(path, "must be finite");
  return value;
}

std::int64_t as_integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) {
    throw ConfigError(path, std::string("expected an integer, got ") + type_name(j));
  }
  return j.get<std::int64_t>();
}

std::uint64_t as_unsigned(const json& j, const std::string& path) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<std::int64_t>() >= 0)) {
    throw ConfigError(path, "expected a non-negative integer");
  }
  return j.get<std::uint64_t>();
}

bool as_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw ConfigError(path, std::string("expected a boolean, got ") + type_name(j));
  return j.get<bool>();
}

std::string as_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, std::string("expected a string, got ") + type_name(j));
  return j.get<std::string>();
}

double number_or(const json& j, const std::string& path, const char* key, double fallback) {
  return j.contains(key) ? as_number(j.at(key), join(path, key)) : fallback;
}

std::int64_t integer_or(const json& j, const std::string& path, const char* key, std::int64_t fallback) {
  return j.contains(key) ? as_integer(j.at(key), join(path, key)) : fallback;
}

bool bool_or(const json& j, const std::string& path, const char* key, bool fallback) {
  return j.contains(key) ? as_bool(j.at(key), join(path, key)) : fallback;
}

Vector as_vector(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError(path, std::string("expected an array, got ") + type_name(j));
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v(static_cast<Eigen::Index>(i)) = as_number(j[i], indexed(path, i));
  }
  return v;
}

Matrix as_matrix(const json& j, const std::string& path) {
  if (!j.is_array() || j.empty()) throw ConfigError(path, "expected a non-empty array of rows");
  const auto cols = as_vector(j[0], indexed(path, 0)).size();
  Matrix m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Vector row = as_vector(j[r], indexed(path, r));
    if (row.size() != cols) {
      throw ConfigError(indexed(path, r), "expected " + std::to_string(cols) + " entries, got " +
                                              std::to_string(row.size()));
    }
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

[[noreturn]] void rethrow_under(const ConfigError& e, const std::string& prefix) {
  if (e.key().rfind(prefix, 0) == 0) throw e;
  std::string message = e.what();
  if (!e.key().empty()) {
    const auto cut = message.find("': ");
    if (cut != std::string::npos) message = message.substr(cut + 3);
  }
  throw ConfigError(e.key().empty() ? prefix : join(prefix, e.key()), message);
}

CoordinateDistribution parse_coordinate(const json& j, const std::string& path) {
  require_object(j, path);
  const auto type = as_string(required(j, path, "type"), join(path, "type"));
  if (type == "uniform") {
    allow_keys(j, path, {"type", "lower", "upper"});
    return UniformCoordinate{as_number(required(j, path, "lower"), join(path, "lower")),
                             as_number(required(j, path, "upper"), join(path, "upper"))};
  }
  if (type == "two_point") {
    allow_keys(j, path, {"type", "low", "high", "p_high"});
    return TwoPointCoordinate{as_number(required(j, path, "low"), join(path, "low")),
                              as_number(required(j, path, "high"), join(path, "high")),
                              as_number(required(j, path, "p_high"), join(path, "p_high"))};
  }
  if (type == "constant") {
    allow_keys(j, path, {"type", "value"});
    return ConstantCoordinate{as_number(required(j, path, "value"), join(path, "value"))};
  }
  throw ConfigError(join(path, "type"),
                    "unknown coordinate type '" + type + "' (supported: uniform, two_point, constant)");
}

CovariateSpec parse_covariates(const json& j, const std::string& path) {
  require_object(j, path);
  const auto type = as_string(required(j, path, "type"), join(path, "type"));
  try {
    if (type == "discrete") {
      allow_keys(j, path, {"type", "points", "probabilities", "intercept"});
      const auto& pts = required(j, path, "points");
      if (!pts.is_array()) throw ConfigError(join(path, "points"), "expected an array of points");
      std::vector<Vector> points;
      for (std::size_t i = 0; i < pts.size(); ++i) {
        points.push_back(as_vector(pts[i], indexed(join(path, "points"), i)));
      }
      const Vector probs = as_vector(required(j, path, "probabilities"), join(path, "probabilities"));
      return CovariateSpec::discrete(std::move(points),
                                     std::vector<double>(probs.data(), probs.data() + probs.size()),
                                     bool_or(j, path, "intercept", false));
    }
    if (type == "product") {
      allow_keys(j, path, {"type", "coordinates", "intercept"});
      const auto& cs = required(j, path, "coordinates");
      if (!cs.is_array()) throw ConfigError(join(path, "coordinates"), "expected an array");
      std::vector<CoordinateDistribution> coords;
      for (std::size_t i = 0; i < cs.size(); ++i) {
        coords.push_back(parse_coordinate(cs[i], indexed(join(path, "coordinates"), i)));
      }
      return CovariateSpec::product(std::move(coords), bool_or(j, path, "intercept", true));
    }
  } catch (const ConfigError& e) {
    if (e.key().rfind(path, 0) == 0) throw;
    rethrow_under(e, "model");
  }
  throw ConfigError(join(path, "type"),
                    "unknown covariate type '" + type + "' (supported: discrete, product)");
}

ArmModel parse_arm(const json& j, const std::string& path) {
  require_object(j, path);
  allow_keys(j, path, {"family", "variance"});
  const auto family = as_string(required(j, path, "family"), join(path, "family"));
  if (family == "logistic") {
    if (j.contains("variance")) throw ConfigError(join(path, "variance"), "logistic arms have no variance");
    return ArmModel::logistic();
  }
  if (family == "normal") {
    const double variance = number_or(j, path, "variance", 1.0);
    if (!(variance > 0.0)) throw ConfigError(join(path, "variance"), "must be positive");
    return ArmModel::normal(variance);
  }
  throw ConfigError(join(path, "family"),
                    "unknown family '" + family + "' (supported: logistic, normal)");
}

Matrix box_side(const json& j, const std::string& path, int K, int d) {
  if (j.is_number()) return Matrix::Constant(K, d, as_number(j, path));
  const Matrix m = as_matrix(j, path);
  if (m.rows() != K || m.cols() != d) {
    throw ConfigError(path, "expected a number or a " + std::to_string(K) + " x " +
                                std::to_string(d) + " matrix");
  }
  return m;
}

AllocationRule parse_rule(const json& j, int K, int d) {
  const std::string path = "rule";
  require_object(j, path);
  allow_keys(j, path, {"kind", "spread", "g"});
  const auto kind = as_string(required(j, path, "kind"), "rule.kind");
  const double spread = number_or(j, path, "spread", 1.0);
  if (!(spread > 0.0)) throw ConfigError("rule.spread", "must be positive");
  auto need_two = [&] {
    if (K != 2) throw ConfigError("rule.kind", "rule '" + kind + "' needs exactly two arms");
  };
  auto no_g = [&] {
    if (j.contains("g")) throw ConfigError("rule.g", "rule '" + kind + "' takes no g");
  };
  if (kind == "ratio_of_g") {
    const auto g = j.contains("g") ? as_string(j.at("g"), "rule.g") : std::string("exponential");
    if (g == "exponential") return AllocationRule::ratio_of_g(K, d, RatioFunction::exponential);
    if (g == "one_plus_square") return AllocationRule::ratio_of_g(K, d, RatioFunction::one_plus_square);
    throw ConfigError("rule.g", "unknown g '" + g + "' (supported: exponential, one_plus_square)");
  }
  if (kind == "exponential") {
    no_g();
    return AllocationRule::exponential(K, d, spread);
  }
  if (kind == "two_arm_difference") {
    need_two();
    const auto g = j.contains("g") ? as_string(j.at("g"), "rule.g") : std::string("normal_cdf");
    if (g == "normal_cdf") return AllocationRule::two_arm_difference(d, DifferenceFunction::normal_cdf, spread);
    if (g == "logistic") return AllocationRule::two_arm_difference(d, DifferenceFunction::logistic, spread);
    throw ConfigError("rule.g", "unknown g '" + g + "' (supported: normal_cdf, logistic)");
  }
  if (kind == "odds_ratio") {
    need_two();
    no_g();
    return AllocationRule::odds_ratio(d);
  }
  if (kind == "covariate_free_normal") {
    need_two();
    no_g();
    return AllocationRule::covariate_free_normal(d, spread);
  }
  std::string list;
  for (auto k : supported_rule_kinds()) list += (list.empty() ? "" : ", ") + std::string(k);
  throw ConfigError("rule.kind", "unknown rule kind '" + kind + "' (supported: " + list + ")");
}

Tolerances parse_tolerances(const json& j) {
  const std::string path = "tolerances";
  require_object(j, path);
  allow_keys(j, path,
             {"allocation_variance", "allocation_mean_sd", "estimator_variance",
              "conditional_variance", "plugin_sigma", "plugin_V", "bb_variance"});
  Tolerances t;
  auto read = [&](const char* key, double& field) {
    field = number_or(j, path, key, field);
    if (!(field > 0.0)) throw ConfigError(join(path, key), "must be positive");
  };
  read("allocation_variance", t.allocation_variance);
  read("allocation_mean_sd", t.allocation_mean_sd);
  read("estimator_variance", t.estimator_variance);
  read("conditional_variance", t.conditional_variance);
  read("plugin_sigma", t.plugin_sigma);
  read("plugin_V", t.plugin_V);
  read("bb_variance", t.bb_variance);
  return t;
}

json tolerances_to_json(const Tolerances& t) {
  return {{"allocation_variance", t.allocation_variance},
          {"allocation_mean_sd", t.allocation_mean_sd},
          {"estimator_variance", t.estimator_variance},
          {"conditional_variance", t.conditional_variance},
          {"plugin_sigma", t.plugin_sigma},
          {"plugin_V", t.plugin_V},
          {"bb_variance", t.bb_variance}};
}

}  // namespace

std::vector<std::string_view> supported_criteria() {
  return {"allocation_clt",     "estimator_clt",   "conditional_clt",
          "plugin_consistency", "bb_closed_forms", "consistency_rate"};
}

ExperimentConfig parse_config(const nlohmann::json& document) {
  require_object(document, "");
  allow_keys(document, "",
             {"name", "model", "rule", "n", "m0", "refit_interval", "replicates", "seed", "workers",
              "x_list", "estimation", "expectation", "plugin", "output", "criteria", "tolerances",
              "consistency_horizons"});

  // model
  const auto& m = required(document, "", "model");
  require_object(m, "model");
  allow_keys(m, "model", {"covariates", "arms", "theta", "theta_box"});
  CovariateSpec covariates = parse_covariates(required(m, "model", "covariates"), "model.covariates");
  const auto& arms_doc = required(m, "model", "arms");
  if (!arms_doc.is_array()) throw ConfigError("model.arms", "expected an array of arms");
  std::vector<ArmModel> arms;
  for (std::size_t k = 0; k < arms_doc.size(); ++k) {
    arms.push_back(parse_arm(arms_doc[k], indexed("model.arms", k)));
  }
  const int K = static_cast<int>(arms.size());
  const int d = covariates.dimension();
  if (K < 2) throw ConfigError("model.arms", "need at least two arms");
  const Matrix theta = as_matrix(required(m, "model", "theta"), "model.theta");
  if (theta.rows() != K || theta.cols() != d) {
    throw ConfigError("model.theta", "expected " + std::to_string(K) + " x " + std::to_string(d) +
                                         " (arms x covariate dimension), got " +
                                         std::to_string(theta.rows()) + " x " +
                                         std::to_string(theta.cols()));
  }
  ParameterBox box = ParameterBox::uniform(K, d, -10.0, 10.0);
  if (m.contains("theta_box")) {
    const auto& b = m.at("theta_box");
    require_object(b, "model.theta_box");
    allow_keys(b, "model.theta_box", {"lower", "upper"});
    box.lower = box_side(required(b, "model.theta_box", "lower"), "model.theta_box.lower", K, d);
    box.upper = box_side(required(b, "model.theta_box", "upper"), "model.theta_box.upper", K, d);
  }
  std::optional<TrialModel> model;
  try {
    model.emplace(std::move(arms), std::move(covariates), theta, std::move(box));
  } catch (const ConfigError& e) {
    rethrow_under(e, "model");
  }

  std::optional<AllocationRule> rule;
  try {
    rule.emplace(parse_rule(required(document, "", "rule"), K, d));
  } catch (const ConfigError& e) {
    if (e.key().rfind("rule", 0) == 0) throw;
    rethrow_under(e, "rule");
  }

  ExperimentConfig config(std::move(*model), std::move(*rule));
  config.name = document.contains("name") ? as_string(document.at("name"), "name") : "experiment";

  config.n = as_integer(required(document, "", "n"), "n");
  config.m0 = static_cast<int>(integer_or(document, "", "m0", d + 1));
  if (config.m0 < d + 1) {
    throw ConfigError("m0", "burn-in size must be at least d + 1 = " + std::to_string(d + 1));
  }
  if (config.n < static_cast<std::int64_t>(K) * config.m0) {
    throw ConfigError("n", "horizon " + std::to_string(config.n) + " is below K * m0 = " +
                               std::to_string(static_cast<std::int64_t>(K) * config.m0));
  }
  config.estimation.refit_interval = static_cast<int>(integer_or(document, "", "refit_interval", 1));
  if (config.estimation.refit_interval < 1) throw ConfigError("refit_interval", "must be >= 1");
  config.replicates = integer_or(document, "", "replicates", 1);
  if (config.replicates < 1) throw ConfigError("replicates", "must be >= 1");
  config.seed = document.contains("seed") ? as_unsigned(document.at("seed"), "seed") : 1;
  config.workers = static_cast<int>(integer_or(document, "", "workers", 1));
  if (config.workers < 0) throw ConfigError("workers", "must be >= 0");

  if (document.contains("x_list")) {
    const auto& xs = document.at("x_list");
    if (!xs.is_array()) throw ConfigError("x_list", "expected an array of covariate vectors");
    for (std::size_t i = 0; i < xs.size(); ++i) {
      Vector x = as_vector(xs[i], indexed("x_list", i));
      if (x.size() != d) {
        throw ConfigError(indexed("x_list", i), "expected dimension " + std::to_string(d));
      }
      if (!config.model.covariates().support_index(x)) {
        throw ConfigError(indexed("x_list", i), "point is not in the discrete covariate support");
      }
      config.x_list.push_back(std::move(x));
    }
  }

  if (document.contains("estimation")) {
    const auto& e = document.at("estimation");
    require_object(e, "estimation");
    allow_keys(e, "estimation", {"gradient_tolerance", "step_tolerance", "max_iterations", "shared_slopes"});
    auto& est = config.estimation;
    est.gradient_tolerance = number_or(e, "estimation", "gradient_tolerance", est.gradient_tolerance);
    est.step_tolerance = number_or(e, "estimation", "step_tolerance", est.step_tolerance);
    est.max_iterations = static_cast<int>(integer_or(e, "estimation", "max_iterations", est.max_iterations));
    est.shared_slopes = bool_or(e, "estimation", "shared_slopes", est.shared_slopes);
    if (!(est.gradient_tolerance > 0.0)) throw ConfigError("estimation.gradient_tolerance", "must be positive");
    if (!(est.step_tolerance > 0.0)) throw ConfigError("estimation.step_tolerance", "must be positive");
    if (est.max_iterations < 1) throw ConfigError("estimation.max_iterations", "must be >= 1");
  }
  if (config.estimation.shared_slopes) {
    for (int k = 0; k < K; ++k) {
      if (config.model.arm(k).family() != Family::normal) {
        throw ConfigError("estimation.shared_slopes", "needs every arm to be normal");
      }
    }
    if (!config.model.covariates().intercept()) {
      throw ConfigError("estimation.shared_slopes", "needs covariates with an intercept");
    }
  }

  if (document.contains("expectation")) {
    const auto& e = document.at("expectation");
    require_object(e, "expectation");
    allow_keys(e, "expectation", {"max_quadrature_dimensions", "nodes_per_dimension",
                                  "monte_carlo_draws", "monte_carlo_seed", "force_monte_carlo"});
    auto& p = config.expectation;
    p.max_quadrature_dimensions = static_cast<int>(
        integer_or(e, "expectation", "max_quadrature_dimensions", p.max_quadrature_dimensions));
    p.nodes_per_dimension =
        static_cast<int>(integer_or(e, "expectation", "nodes_per_dimension", p.nodes_per_dimension));
    const auto draws = integer_or(e, "expectation", "monte_carlo_draws",
                                  static_cast<std::int64_t>(p.monte_carlo_draws));
    if (draws < 1) throw ConfigError("expectation.monte_carlo_draws", "must be >= 1");
    p.monte_carlo_draws = static_cast<std::size_t>(draws);
    if (e.contains("monte_carlo_seed")) {
      p.monte_carlo_seed = as_unsigned(e.at("monte_carlo_seed"), "expectation.monte_carlo_seed");
    }
    p.force_monte_carlo = bool_or(e, "expectation", "force_monte_carlo", p.force_monte_carlo);
    static constexpr int kNodes[] = {7, 15, 20, 30, 64};
    if (std::find(std::begin(kNodes), std::end(kNodes), p.nodes_per_dimension) == std::end(kNodes)) {
      throw ConfigError("expectation.nodes_per_dimension", "supported values are 7, 15, 20, 30, 64");
    }
  }

  if (document.contains("plugin")) {
    const auto& p = document.at("plugin");
    require_object(p, "plugin");
    allow_keys(p, "plugin", {"enabled", "estimate_dispersion"});
    config.compute_plugin = bool_or(p, "plugin", "enabled", true);
    config.plugin.estimate_dispersion = bool_or(p, "plugin", "estimate_dispersion", false);
  }

  if (document.contains("output")) {
    const auto& o = document.at("output");
    require_object(o, "output");
    allow_keys(o, "output", {"dir", "per_patient_csv"});
    config.output.dir = o.contains("dir") ? as_string(o.at("dir"), "output.dir") : "";
    config.output.per_patient_csv = bool_or(o, "output", "per_patient_csv", false);
  }

  if (document.contains("criteria")) {
    const auto& c = document.at("criteria");
    if (!c.is_array()) throw ConfigError("criteria", "expected an array of criterion names");
    const auto known = supported_criteria();
    std::set<std::string> seen;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const auto name = as_string(c[i], indexed("criteria", i));
      if (std::find(known.begin(), known.end(), name) == known.end()) {
        std::string list;
        for (auto k : known) list += (list.empty() ? "" : ", ") + std::string(k);
        throw ConfigError(indexed("criteria", i),
                          "unknown criterion '" + name + "' (supported: " + list + ")");
      }
      if (!seen.insert(name).second) throw ConfigError(indexed("criteria", i), "listed twice");
      config.criteria.push_back(name);
    }
  }
  if (document.contains("tolerances")) config.tolerances = parse_tolerances(document.at("tolerances"));

  if (document.contains("consistency_horizons")) {
    const auto& h = document.at("consistency_horizons");
    if (!h.is_array()) throw ConfigError("consistency_horizons", "expected an array of horizons");
    for (std::size_t i = 0; i < h.size(); ++i) {
      const auto value = as_integer(h[i], indexed("consistency_horizons", i));
      if (value < static_cast<std::int64_t>(K) * config.m0) {
        throw ConfigError(indexed("consistency_horizons", i), "horizon is below K * m0");
      }
      if (!config.consistency_horizons.empty() && value <= config.consistency_horizons.back()) {
        throw ConfigError(indexed("consistency_horizons", i), "horizons must increase");
      }
      config.consistency_horizons.push_back(value);
    }
  }
  const bool wants_rate = std::find(config.criteria.begin(), config.criteria.end(),
                                    "consistency_rate") != config.criteria.end();
  if (wants_rate && config.consistency_horizons.size() < 2) {
    throw ConfigError("consistency_horizons", "consistency_rate needs at least two horizons");
  }
  const bool wants_bb = std::find(config.criteria.begin(), config.criteria.end(),
                                  "bb_closed_forms") != config.criteria.end();
  if (wants_bb && !config.estimation.shared_slopes) {
    throw ConfigError("estimation.shared_slopes", "bb_closed_forms needs the shared-slope fit");
  }

  json echo = document;
  echo["name"] = config.name;
  echo["m0"] = config.m0;
  echo["refit_interval"] = config.estimation.refit_interval;
  echo["replicates"] = config.replicates;
  echo["seed"] = config.seed;
  echo["workers"] = config.workers;
  echo["rule"]["spread"] = config.rule.spread();
  echo["estimation"] = {{"gradient_tolerance", config.estimation.gradient_tolerance},
                        {"step_tolerance", config.estimation.step_tolerance},
                        {"max_iterations", config.estimation.max_iterations},
                        {"shared_slopes", config.estimation.shared_slopes}};
  echo["expectation"] = {{"max_quadrature_dimensions", config.expectation.max_quadrature_dimensions},
                         {"nodes_per_dimension", config.expectation.nodes_per_dimension},
                         {"monte_carlo_draws", config.expectation.monte_carlo_draws},
                         {"monte_carlo_seed", config.expectation.monte_carlo_seed},
                         {"force_monte_carlo", config.expectation.force_monte_carlo}};
  echo["plugin"] = {{"enabled", config.compute_plugin},
                    {"estimate_dispersion", config.plugin.estimate_dispersion}};
  echo["output"] = {{"dir", config.output.dir}, {"per_patient_csv", config.output.per_patient_csv}};
  echo["criteria"] = config.criteria;
  echo["tolerances"] = tolerances_to_json(config.tolerances);
  echo["consistency_horizons"] = config.consistency_horizons;
  config.document = std::move(echo);
  return config;
}

ExperimentConfig parse_config_text(std::string_view text) {
  nlohmann::json document;
  try {
    document = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  return parse_config(document);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_config_text(buffer.str());
  } catch (const ConfigError& e) {
    throw ConfigError(e.key(), std::string(e.what()).substr(e.key().empty() ? 0 : e.key().size() + 4) +
                                   " (in " + path.string() + ")");
  }
}

// ---------------------------------------------------------------------------
// Replication
// ---------------------------------------------------------------------------

namespace {

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

Matrix elementwise_median(const std::vector<const Matrix*>& ms) {
  if (ms.empty()) return {};
  Matrix out(ms.front()->rows(), ms.front()->cols());
  std::vector<double> buf(ms.size());
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) {
      for (std::size_t i = 0; i < ms.size(); ++i) buf[i] = (*ms[i])(r, c);
      out(r, c) = median(buf);
    }
  }
  return out;
}

template <class Get>
Matrix median_of(const std::vector<const PluginReport*>& reports, Get get) {
  std::vector<const Matrix*> ms;
  ms.reserve(reports.size());
  for (const auto* r : reports) ms.push_back(&get(*r));
  return elementwise_median(ms);
}

PluginReport median_plugin_report(const std::vector<const PluginReport*>& reports) {
  PluginReport out;
  const auto& first = *reports.front();
  std::vector<double> ns;
  for (const auto* r : reports) ns.push_back(static_cast<double>(r->n));
  out.n = static_cast<std::int64_t>(std::llround(median(ns)));
  out.theta_hat = median_of(reports, [](const PluginReport& r) -> const Matrix& { return r.theta_hat; });
  // vectors are treated as one-column matrices
  std::vector<Matrix> dispersion;
  for (const auto* r : reports) dispersion.emplace_back(r->dispersion);
  std::vector<const Matrix*> dptr;
  for (const auto& m : dispersion) dptr.push_back(&m);
  out.dispersion = elementwise_median(dptr).col(0);
  for (std::size_t k = 0; k < first.information.size(); ++k) {
    out.information.push_back(
        median_of(reports, [k](const PluginReport& r) -> const Matrix& { return r.information[k]; }));
    out.V_blocks.push_back(
        median_of(reports, [k](const PluginReport& r) -> const Matrix& { return r.V_blocks[k]; }));
    out.dg_dtheta.push_back(
        median_of(reports, [k](const PluginReport& r) -> const Matrix& { return r.dg_dtheta[k]; }));
  }
  out.singular.assign(first.singular.size(), false);
  out.sigma1 = median_of(reports, [](const PluginReport& r) -> const Matrix& { return r.sigma1; });
  out.sigma = median_of(reports, [](const PluginReport& r) -> const Matrix& { return r.sigma; });
  for (std::size_t c = 0; c < first.conditional.size(); ++c) {
    ConditionalEstimate e;
    e.x = first.conditional[c].x;
    std::vector<double> masses;
    std::vector<Matrix> pis;
    for (const auto* r : reports) {
      masses.push_back(r->conditional[c].mass);
      pis.emplace_back(r->conditional[c].pi);
    }
    e.mass = median(masses);
    std::vector<const Matrix*> pptr;
    for (const auto& m : pis) pptr.push_back(&m);
    e.pi = elementwise_median(pptr).col(0);
    e.sigma_given_x = median_of(
        reports, [c](const PluginReport& r) -> const Matrix& { return r.conditional[c].sigma_given_x; });
    out.conditional.push_back(std::move(e));
  }
  out.psd = std::all_of(reports.begin(), reports.end(), [](const PluginReport* r) { return r->psd; });
  return out;
}

double relative_error(const Matrix& estimate, const Matrix& truth) {
  if (estimate.size() == 0) return std::numeric_limits<double>::quiet_NaN();
  return infinity_norm(estimate - truth) / infinity_norm(truth);
}

ReplicateRecord run_one(const ExperimentConfig& config, const TheoryReport& theory, std::int64_t i,
                        std::optional<PluginReport>& plugin) {
  ReplicateRecord record;
  record.replicate = i;
  record.seed = derive_seed(config.seed, static_cast<std::uint64_t>(i));
  try {
    TrialOptions options = config.trial_options();
    options.trajectory_stride = static_cast<int>(std::min<std::int64_t>(config.n, 1 << 30));
    const TrialHistory history = run_trial(config.model, config.rule, options, record.seed);
    record.counts = history.counts;
    record.theta_hat = history.theta_hat;
    record.x_counts = history.support_counts;
    record.x_arm_counts = history.support_arm_counts;
    for (const auto& f : history.fit_flags) record.fit_failures += f.failures;
    if (config.compute_plugin) {
      plugin = plugin_estimates(history, config.model, config.rule, config.x_list, config.plugin);
      record.plugin_sigma_error = relative_error(plugin->sigma, theory.sigma);
      record.plugin_V_error.resize(static_cast<Eigen::Index>(plugin->V_blocks.size()));
      for (std::size_t k = 0; k < plugin->V_blocks.size(); ++k) {
        record.plugin_V_error(static_cast<Eigen::Index>(k)) =
            relative_error(plugin->V_blocks[k], theory.V_blocks[k]);
      }
    }
  } catch (const std::exception& e) {
    record = ReplicateRecord{};
    record.replicate = i;
    record.seed = derive_seed(config.seed, static_cast<std::uint64_t>(i));
    record.failed = true;
    record.error = e.what();
    plugin.reset();
  }
  return record;
}

std::vector<Vector> conditional_points(const ExperimentConfig& config) {
  if (!config.x_list.empty()) return config.x_list;
  return config.model.covariates().support();
}

}  // namespace

Matrix sample_covariance(const Matrix& samples) {
  const auto cols = samples.cols();
  if (samples.rows() < 2) return Matrix::Zero(cols, cols);
  const Eigen::RowVectorXd mean = samples.colwise().mean();
  const Matrix centered = samples.rowwise() - mean;
  Matrix cov = (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
  return 0.5 * (cov + cov.transpose());
}

void aggregate(ReplicationSummary& summary, const ExperimentConfig& config,
               const TheoryReport& theory) {
  const int K = config.model.arm_count();
  const int d = config.model.dimension();
  const double n = static_cast<double>(config.n);
  const double root_n = std::sqrt(n);

  summary.n = config.n;
  summary.replicates = static_cast<std::int64_t>(summary.records.size());
  summary.master_seed = config.seed;
  summary.v = theory.v;
  summary.theta = config.model.true_theta();
  summary.support = config.model.covariates().support();

  std::vector<const ReplicateRecord*> ok;
  for (const auto& r : summary.records) {
    if (!r.failed) ok.push_back(&r);
  }
  summary.failures = summary.replicates - static_cast<std::int64_t>(ok.size());
  const auto rows = static_cast<Eigen::Index>(ok.size());

  Matrix alloc(rows, K);
  Matrix est(rows, static_cast<Eigen::Index>(K) * d);
  std::vector<double> errors;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& r = *ok[static_cast<std::size_t>(i)];
    for (int k = 0; k < K; ++k) {
      alloc(i, k) = root_n * (static_cast<double>(r.counts[static_cast<std::size_t>(k)]) / n - theory.v(k));
      for (int l = 0; l < d; ++l) {
        est(i, k * d + l) = root_n * (r.theta_hat(k, l) - summary.theta(k, l));
      }
    }
    errors.push_back((r.theta_hat - summary.theta).norm());
  }
  auto mean_of = [](const Matrix& s) -> Vector {
    if (s.rows() == 0) return Vector::Constant(s.cols(), std::numeric_limits<double>::quiet_NaN());
    return s.colwise().mean().transpose();
  };
  auto diag_ratio = [](const Matrix& emp, const Matrix& target) {
    Vector out(emp.rows());
    for (Eigen::Index j = 0; j < emp.rows(); ++j) {
      out(j) = target(j, j) > 0.0 ? emp(j, j) / target(j, j) : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
  };
  summary.allocation_mean = mean_of(alloc);
  summary.allocation_covariance = sample_covariance(alloc);
  summary.allocation_ratio = diag_ratio(summary.allocation_covariance, theory.sigma);
  summary.estimator_mean = mean_of(est);
  summary.estimator_covariance = sample_covariance(est);
  summary.estimator_ratio = diag_ratio(summary.estimator_covariance, theory.V);
  summary.median_estimation_error = median(errors);

  summary.conditional.clear();
  if (!summary.support.empty()) {
    for (const auto& x : conditional_points(config)) {
      const auto s = *config.model.covariates().support_index(x);
      ConditionalSummary c;
      c.x = x;
      c.pi = probabilities(config.rule, summary.theta, x);
      c.theory = Matrix::Constant(K, K, std::numeric_limits<double>::quiet_NaN());
      for (const auto& t : theory.conditional) {
        if (t.x == x) c.theory = t.sigma_given_x;
      }
      std::vector<Eigen::Index> used;
      for (Eigen::Index i = 0; i < rows; ++i) {
        if (ok[static_cast<std::size_t>(i)]->x_counts[s] > 0) used.push_back(i);
      }
      Matrix samples(static_cast<Eigen::Index>(used.size()), K);
      for (std::size_t u = 0; u < used.size(); ++u) {
        const auto& r = *ok[static_cast<std::size_t>(used[u])];
        const double nx = static_cast<double>(r.x_counts[s]);
        for (int k = 0; k < K; ++k) {
          const double share = static_cast<double>(r.x_arm_counts[s][static_cast<std::size_t>(k)]) / nx;
          samples(static_cast<Eigen::Index>(u), k) = std::sqrt(nx) * (share - c.pi(k));
        }
      }
      c.replicates_used = static_cast<std::int64_t>(used.size());
      c.mean = mean_of(samples);
      c.covariance = sample_covariance(samples);
      c.ratio = diag_ratio(c.covariance, c.theory);
      summary.conditional.push_back(std::move(c));
    }
  }

  std::vector<double> sigma_errors;
  std::vector<std::vector<double>> v_errors(static_cast<std::size_t>(K));
  for (const auto* r : ok) {
    if (std::isfinite(r->plugin_sigma_error)) sigma_errors.push_back(r->plugin_sigma_error);
    for (Eigen::Index k = 0; k < r->plugin_V_error.size(); ++k) {
      if (std::isfinite(r->plugin_V_error(k))) v_errors[static_cast<std::size_t>(k)].push_back(r->plugin_V_error(k));
    }
  }
  summary.has_plugin = !sigma_errors.empty();
  summary.median_plugin_sigma_error = summary.has_plugin ? median(sigma_errors) : 0.0;
  summary.median_plugin_V_error = summary.has_plugin ? Vector(K) : Vector();
  if (summary.has_plugin) {
    for (int k = 0; k < K; ++k) summary.median_plugin_V_error(k) = median(v_errors[static_cast<std::size_t>(k)]);
  }
}

ReplicationSummary run_replications(const ExperimentConfig& config) {
  const auto theory = theory_report(config.model, config.rule, config.x_list, config.expectation);
  return run_replications(config, theory);
}

ReplicationSummary run_replications(const ExperimentConfig& config, const TheoryReport& theory) {
  const auto R = config.replicates;
  ReplicationSummary summary;
  summary.records.resize(static_cast<std::size_t>(R));
  std::vector<std::optional<PluginReport>> plugins(static_cast<std::size_t>(R));

  int workers = config.workers == 0 ? static_cast<int>(std::thread::hardware_concurrency()) : config.workers;
  workers = static_cast<int>(std::clamp<std::int64_t>(workers, 1, R));
  std::atomic<std::int64_t> next{0};
  auto work = [&] {
    for (auto i = next.fetch_add(1); i < R; i = next.fetch_add(1)) {
      const auto idx = static_cast<std::size_t>(i);
      summary.records[idx] = run_one(config, theory, i, plugins[idx]);
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  aggregate(summary, config, theory);

  std::vector<const PluginReport*> usable;
  for (const auto& p : plugins) {
    if (p && std::none_of(p->singular.begin(), p->singular.end(), [](bool s) { return s; })) {
      usable.push_back(&*p);
    }
  }
  if (!usable.empty()) summary.median_plugin = median_plugin_report(usable);
  return summary;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

nlohmann::json build_report(const ExperimentConfig& config, const TheoryReport& theory,
                            const ReplicationSummary* summary,
                            const VerificationReport* verification,
                            const std::vector<ConsistencyPoint>& consistency) {
  nlohmann::json report;
  report["tool"] = {{"name", "cara"}, {"version", tool_version()}};
  report["config"] = config.document;
  report["theory"] = theory;
  report["summary"] = summary ? nlohmann::json(*summary) : nlohmann::json(nullptr);
  report["verification"] = verification ? nlohmann::json(*verification) : nlohmann::json(nullptr);
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : consistency) {
    points.push_back({{"n", p.n}, {"median_error", number_to_json(p.median_error)}});
  }
  report["consistency"] = std::move(points);
  return report;
}

void emit_reports(const std::filesystem::path& dir, const ExperimentConfig& config,
                  const TheoryReport& theory, const ReplicationSummary* summary,
                  const VerificationReport* verification,
                  const std::vector<ConsistencyPoint>& consistency) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());

  const auto json_path = dir / "report.json";
  {
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + json_path.string() + "' for writing");
    out << build_report(config, theory, summary, verification, consistency).dump(2) << '\n';
    if (!out) throw IoError("failed writing '" + json_path.string() + "'");
  }
  if (summary) {
    const auto csv_path = dir / "replicates.csv";
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + csv_path.string() + "' for writing");
    try {
      write_replicate_csv(out, *summary);
    } catch (const IoError& e) {
      throw IoError(std::string(e.what()) + " ('" + csv_path.string() + "')");
    }
  }
}

}  // namespace cara
