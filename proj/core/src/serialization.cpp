#include "cara/serialization.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <ostream>

#include "cara/errors.hpp"

namespace cara {

namespace {

Json matrices_to_json(const std::vector<Matrix>& ms) {
  Json out = Json::array();
  for (const auto& m : ms) out.push_back(matrix_to_json(m));
  return out;
}

std::vector<Matrix> matrices_from_json(const Json& j) {
  std::vector<Matrix> out;
  for (const auto& m : j) out.push_back(matrix_from_json(m));
  return out;
}

Json vectors_to_json(const std::vector<Vector>& vs) {
  Json out = Json::array();
  for (const auto& v : vs) out.push_back(vector_to_json(v));
  return out;
}

std::vector<Vector> vectors_from_json(const Json& j) {
  std::vector<Vector> out;
  for (const auto& v : j) out.push_back(vector_from_json(v));
  return out;
}

void write_cell(std::ostream& out, double value) { out << ',' << format_double(value); }

}  // namespace

Json number_to_json(double value) {
  if (!std::isfinite(value)) return nullptr;
  return value;
}

double number_from_json(const Json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  return j.get<double>();
}

Json matrix_to_json(const Matrix& m) {
  Json data = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(number_to_json(m(r, c)));
  }
  return {{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("shape") || !j.contains("data")) {
    throw Error("matrix must be an object with 'shape' and 'data'");
  }
  const auto rows = j.at("shape").at(0).get<Eigen::Index>();
  const auto cols = j.at("shape").at(1).get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw Error("matrix data does not match its shape");
  }
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = number_from_json(data[static_cast<std::size_t>(r * cols + c)]);
    }
  }
  return m;
}

Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(number_to_json(v(i)));
  return out;
}

Vector vector_from_json(const Json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = number_from_json(j[i]);
  return v;
}

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

ExpectationMethod expectation_method_from_name(std::string_view name) {
  for (auto m : {ExpectationMethod::exact_enumeration, ExpectationMethod::quadrature,
                 ExpectationMethod::monte_carlo}) {
    if (expectation_method_name(m) == name) return m;
  }
  throw Error("unknown expectation method '" + std::string(name) + "'");
}

// --- Theory / plug-in ---------------------------------------------------------

void to_json(Json& j, const TheoryReport& r) {
  Json conditional = Json::array();
  for (const auto& c : r.conditional) {
    conditional.push_back({{"x", vector_to_json(c.x)},
                           {"mass", number_to_json(c.mass)},
                           {"pi", vector_to_json(c.pi)},
                           {"sigma_given_x", matrix_to_json(c.sigma_given_x)}});
  }
  j = {{"v", vector_to_json(r.v)},
       {"v_standard_error", vector_to_json(r.v_standard_error)},
       {"dg_dtheta", matrices_to_json(r.dg_dtheta)},
       {"information", matrices_to_json(r.information)},
       {"V_blocks", matrices_to_json(r.V_blocks)},
       {"V", matrix_to_json(r.V)},
       {"sigma1", matrix_to_json(r.sigma1)},
       {"sigma2", matrix_to_json(r.sigma2)},
       {"sigma", matrix_to_json(r.sigma)},
       {"conditional", std::move(conditional)},
       {"method", expectation_method_name(r.method)},
       {"node_count", r.node_count}};
}

void from_json(const Json& j, TheoryReport& r) {
  r.v = vector_from_json(j.at("v"));
  r.v_standard_error = vector_from_json(j.at("v_standard_error"));
  r.dg_dtheta = matrices_from_json(j.at("dg_dtheta"));
  r.information = matrices_from_json(j.at("information"));
  r.V_blocks = matrices_from_json(j.at("V_blocks"));
  r.V = matrix_from_json(j.at("V"));
  r.sigma1 = matrix_from_json(j.at("sigma1"));
  r.sigma2 = matrix_from_json(j.at("sigma2"));
  r.sigma = matrix_from_json(j.at("sigma"));
  r.conditional.clear();
  for (const auto& c : j.at("conditional")) {
    r.conditional.push_back({vector_from_json(c.at("x")), number_from_json(c.at("mass")),
                             vector_from_json(c.at("pi")), matrix_from_json(c.at("sigma_given_x"))});
  }
  r.method = expectation_method_from_name(j.at("method").get<std::string>());
  r.node_count = j.at("node_count").get<std::size_t>();
}

void to_json(Json& j, const PluginReport& r) {
  Json conditional = Json::array();
  for (const auto& c : r.conditional) {
    conditional.push_back({{"x", vector_to_json(c.x)},
                           {"mass", number_to_json(c.mass)},
                           {"pi", vector_to_json(c.pi)},
                           {"sigma_given_x", matrix_to_json(c.sigma_given_x)}});
  }
  j = {{"n", r.n},
       {"theta_hat", matrix_to_json(r.theta_hat)},
       {"dispersion", vector_to_json(r.dispersion)},
       {"information", matrices_to_json(r.information)},
       {"V_blocks", matrices_to_json(r.V_blocks)},
       {"singular", r.singular},
       {"sigma1", matrix_to_json(r.sigma1)},
       {"dg_dtheta", matrices_to_json(r.dg_dtheta)},
       {"sigma", matrix_to_json(r.sigma)},
       {"conditional", std::move(conditional)},
       {"psd", r.psd}};
}

void from_json(const Json& j, PluginReport& r) {
  r.n = j.at("n").get<std::int64_t>();
  r.theta_hat = matrix_from_json(j.at("theta_hat"));
  r.dispersion = vector_from_json(j.at("dispersion"));
  r.information = matrices_from_json(j.at("information"));
  r.V_blocks = matrices_from_json(j.at("V_blocks"));
  r.singular = j.at("singular").get<std::vector<bool>>();
  r.sigma1 = matrix_from_json(j.at("sigma1"));
  r.dg_dtheta = matrices_from_json(j.at("dg_dtheta"));
  r.sigma = matrix_from_json(j.at("sigma"));
  r.conditional.clear();
  for (const auto& c : j.at("conditional")) {
    r.conditional.push_back({vector_from_json(c.at("x")), number_from_json(c.at("mass")),
                             vector_from_json(c.at("pi")), matrix_from_json(c.at("sigma_given_x"))});
  }
  r.psd = j.at("psd").get<bool>();
}

void to_json(Json& j, const BbLimits& r) {
  j = {{"v1", number_to_json(r.v1)},
       {"v2", number_to_json(r.v2)},
       {"intercept_covariance", matrix_to_json(r.intercept_covariance)},
       {"slope_covariance", matrix_to_json(r.slope_covariance)},
       {"allocation_variance", number_to_json(r.allocation_variance)}};
}

void from_json(const Json& j, BbLimits& r) {
  r.v1 = number_from_json(j.at("v1"));
  r.v2 = number_from_json(j.at("v2"));
  r.intercept_covariance = matrix_from_json(j.at("intercept_covariance"));
  r.slope_covariance = matrix_from_json(j.at("slope_covariance"));
  r.allocation_variance = number_from_json(j.at("allocation_variance"));
}

// --- Replication ----------------------------------------------------------------

void to_json(Json& j, const ReplicateRecord& r) {
  j = {{"replicate", r.replicate},
       {"seed", r.seed},
       {"failed", r.failed},
       {"error", r.error},
       {"counts", r.counts},
       {"theta_hat", matrix_to_json(r.theta_hat)},
       {"x_counts", r.x_counts},
       {"x_arm_counts", r.x_arm_counts},
       {"fit_failures", r.fit_failures},
       {"plugin_sigma_error", number_to_json(r.plugin_sigma_error)},
       {"plugin_V_error", vector_to_json(r.plugin_V_error)}};
}

void from_json(const Json& j, ReplicateRecord& r) {
  r.replicate = j.at("replicate").get<std::int64_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.failed = j.at("failed").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.counts = j.at("counts").get<std::vector<std::int64_t>>();
  r.theta_hat = matrix_from_json(j.at("theta_hat"));
  r.x_counts = j.at("x_counts").get<std::vector<std::int64_t>>();
  r.x_arm_counts = j.at("x_arm_counts").get<std::vector<std::vector<std::int64_t>>>();
  r.fit_failures = j.at("fit_failures").get<std::int64_t>();
  r.plugin_sigma_error = number_from_json(j.at("plugin_sigma_error"));
  r.plugin_V_error = vector_from_json(j.at("plugin_V_error"));
}

void to_json(Json& j, const ConditionalSummary& r) {
  j = {{"x", vector_to_json(r.x)},
       {"pi", vector_to_json(r.pi)},
       {"theory", matrix_to_json(r.theory)},
       {"replicates_used", r.replicates_used},
       {"mean", vector_to_json(r.mean)},
       {"covariance", matrix_to_json(r.covariance)},
       {"ratio", vector_to_json(r.ratio)}};
}

void from_json(const Json& j, ConditionalSummary& r) {
  r.x = vector_from_json(j.at("x"));
  r.pi = vector_from_json(j.at("pi"));
  r.theory = matrix_from_json(j.at("theory"));
  r.replicates_used = j.at("replicates_used").get<std::int64_t>();
  r.mean = vector_from_json(j.at("mean"));
  r.covariance = matrix_from_json(j.at("covariance"));
  r.ratio = vector_from_json(j.at("ratio"));
}

void to_json(Json& j, const ReplicationSummary& r) {
  j = {{"n", r.n},
       {"replicates", r.replicates},
       {"failures", r.failures},
       {"master_seed", r.master_seed},
       {"v", vector_to_json(r.v)},
       {"theta", matrix_to_json(r.theta)},
       {"support", vectors_to_json(r.support)},
       {"records", r.records},
       {"allocation_mean", vector_to_json(r.allocation_mean)},
       {"allocation_covariance", matrix_to_json(r.allocation_covariance)},
       {"allocation_ratio", vector_to_json(r.allocation_ratio)},
       {"estimator_mean", vector_to_json(r.estimator_mean)},
       {"estimator_covariance", matrix_to_json(r.estimator_covariance)},
       {"estimator_ratio", vector_to_json(r.estimator_ratio)},
       {"conditional", r.conditional},
       {"median_estimation_error", number_to_json(r.median_estimation_error)},
       {"has_plugin", r.has_plugin},
       {"median_plugin_sigma_error", number_to_json(r.median_plugin_sigma_error)},
       {"median_plugin_V_error", vector_to_json(r.median_plugin_V_error)},
       {"median_plugin", r.median_plugin ? Json(*r.median_plugin) : Json(nullptr)}};
}

void from_json(const Json& j, ReplicationSummary& r) {
  r.n = j.at("n").get<std::int64_t>();
  r.replicates = j.at("replicates").get<std::int64_t>();
  r.failures = j.at("failures").get<std::int64_t>();
  r.master_seed = j.at("master_seed").get<std::uint64_t>();
  r.v = vector_from_json(j.at("v"));
  r.theta = matrix_from_json(j.at("theta"));
  r.support = vectors_from_json(j.at("support"));
  r.records = j.at("records").get<std::vector<ReplicateRecord>>();
  r.allocation_mean = vector_from_json(j.at("allocation_mean"));
  r.allocation_covariance = matrix_from_json(j.at("allocation_covariance"));
  r.allocation_ratio = vector_from_json(j.at("allocation_ratio"));
  r.estimator_mean = vector_from_json(j.at("estimator_mean"));
  r.estimator_covariance = matrix_from_json(j.at("estimator_covariance"));
  r.estimator_ratio = vector_from_json(j.at("estimator_ratio"));
  r.conditional = j.at("conditional").get<std::vector<ConditionalSummary>>();
  r.median_estimation_error = number_from_json(j.at("median_estimation_error"));
  r.has_plugin = j.at("has_plugin").get<bool>();
  r.median_plugin_sigma_error = number_from_json(j.at("median_plugin_sigma_error"));
  r.median_plugin_V_error = vector_from_json(j.at("median_plugin_V_error"));
  if (j.at("median_plugin").is_null()) {
    r.median_plugin.reset();
  } else {
    r.median_plugin = j.at("median_plugin").get<PluginReport>();
  }
}

void to_json(Json& j, const CriterionResult& r) {
  j = {{"criterion", r.criterion},
       {"check", r.check},
       {"observed", number_to_json(r.observed)},
       {"target", number_to_json(r.target)},
       {"lower", number_to_json(r.lower)},
       {"upper", number_to_json(r.upper)},
       {"passed", r.passed}};
}

void from_json(const Json& j, CriterionResult& r) {
  r.criterion = j.at("criterion").get<std::string>();
  r.check = j.at("check").get<std::string>();
  r.observed = number_from_json(j.at("observed"));
  r.target = number_from_json(j.at("target"));
  r.lower = number_from_json(j.at("lower"));
  r.upper = number_from_json(j.at("upper"));
  r.passed = j.at("passed").get<bool>();
}

void to_json(Json& j, const VerificationReport& r) {
  j = {{"config_name", r.config_name}, {"results", r.results}, {"passed", r.passed}};
}

void from_json(const Json& j, VerificationReport& r) {
  r.config_name = j.at("config_name").get<std::string>();
  r.results = j.at("results").get<std::vector<CriterionResult>>();
  r.passed = j.at("passed").get<bool>();
}

// --- CSV ------------------------------------------------------------------------

void write_patient_csv(std::ostream& out, const TrialHistory& history) {
  out << 'm';
  for (int l = 1; l <= history.dimension; ++l) out << ",x" << l;
  out << ",arm";
  for (int k = 1; k <= history.arm_count; ++k) out << ",psi" << k;
  out << ",y\n";
  for (const auto& r : history.records) {
    out << r.index;
    for (Eigen::Index l = 0; l < r.x.size(); ++l) write_cell(out, r.x(l));
    out << ',' << (r.arm + 1);
    for (Eigen::Index k = 0; k < r.psi.size(); ++k) write_cell(out, r.psi(k));
    write_cell(out, r.y);
    out << '\n';
  }
  if (!out) throw IoError("failed to write per-patient CSV");
}

Json history_summary(const TrialHistory& history) {
  Json flags = Json::array();
  for (const auto& f : history.fit_flags) {
    flags.push_back({{"fits", f.fits},
                     {"failures", f.failures},
                     {"projected", f.projected},
                     {"not_converged", f.not_converged},
                     {"last_converged", f.last_converged}});
  }
  return {{"n", history.size()},
          {"m0", history.m0},
          {"seed", history.seed},
          {"counts", history.counts},
          {"theta_hat", matrix_to_json(history.theta_hat)},
          {"support", vectors_to_json(history.support)},
          {"support_counts", history.support_counts},
          {"support_arm_counts", history.support_arm_counts},
          {"fit_flags", std::move(flags)}};
}

void write_replicate_csv(std::ostream& out, const ReplicationSummary& summary) {
  const auto K = summary.v.size();
  const auto d = summary.theta.cols();
  const auto S = summary.support.size();
  out << "replicate,seed";
  for (Eigen::Index k = 1; k <= K; ++k) out << ",N_" << k;
  for (Eigen::Index k = 1; k <= K; ++k) {
    for (Eigen::Index l = 1; l <= d; ++l) out << ",theta_" << k << '_' << l;
  }
  for (std::size_t s = 1; s <= S; ++s) {
    out << ",n_x" << s;
    for (Eigen::Index k = 1; k <= K; ++k) out << ",p" << k << "_x" << s;
  }
  out << '\n';
  for (const auto& r : summary.records) {
    out << r.replicate << ',' << r.seed;
    if (r.failed) {
      const auto blanks = K + K * d + static_cast<Eigen::Index>(S) * (K + 1);
      for (Eigen::Index i = 0; i < blanks; ++i) out << ',';
      out << '\n';
      continue;
    }
    for (auto c : r.counts) out << ',' << c;
    for (Eigen::Index k = 0; k < K; ++k) {
      for (Eigen::Index l = 0; l < d; ++l) write_cell(out, r.theta_hat(k, l));
    }
    for (std::size_t s = 0; s < S; ++s) {
      out << ',' << r.x_counts[s];
      for (Eigen::Index k = 0; k < K; ++k) {
        const double p = r.x_counts[s] == 0
                             ? std::numeric_limits<double>::quiet_NaN()
                             : static_cast<double>(r.x_arm_counts[s][static_cast<std::size_t>(k)]) /
                                   static_cast<double>(r.x_counts[s]);
        write_cell(out, p);
      }
    }
    out << '\n';
  }
  if (!out) throw IoError("failed to write replicate CSV");
}

}  // namespace cara
