#include "cara/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cara/errors.hpp"

namespace cara {

namespace {

constexpr double kProbabilityFloor = 1e-300;

void require_positive_spread(double spread) {
  if (!(spread > 0.0) || !std::isfinite(spread)) {
    throw ConfigError("rule.spread", "spread T must be positive and finite");
  }
}

void require_shape(int arms, int dimension) {
  if (arms < 2) throw ConfigError("rule", "at least two arms are required");
  if (dimension < 1) throw ConfigError("rule", "covariate dimension must be >= 1");
}

void check_shapes(const AllocationRule& rule, const Matrix& theta_star, const Vector& x) {
  if (theta_star.rows() != rule.arm_count() || theta_star.cols() != rule.dimension()) {
    throw DimensionError("rule '" + rule.name() + "' expects a " + std::to_string(rule.arm_count()) +
                         " x " + std::to_string(rule.dimension()) + " parameter matrix, got " +
                         std::to_string(theta_star.rows()) + " x " +
                         std::to_string(theta_star.cols()));
  }
  if (x.size() != rule.dimension()) {
    throw DimensionError("rule '" + rule.name() + "' expects covariates of dimension " +
                         std::to_string(rule.dimension()) + ", got " + std::to_string(x.size()));
  }
}

Vector softmax(const Vector& a) {
  Vector e = (a.array() - a.maxCoeff()).exp();
  return e / e.sum();
}

double logistic_fn(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

/// G(u) and G'(u) for two-arm difference rules.
std::pair<double, double> difference_g(DifferenceFunction g, double spread, double u) {
  const double s = u / spread;
  if (g == DifferenceFunction::normal_cdf) {
    return {standard_normal_cdf(s), standard_normal_pdf(s) / spread};
  }
  const double p = logistic_fn(s);
  return {p, p * (1.0 - p) / spread};
}

Vector floor_probabilities(Vector p) {
  return p.cwiseMax(kProbabilityFloor);
}

/// d pi / d z for rules depending on theta only through z = theta x^T.
Matrix score_jacobian(const AllocationRule& rule, const Vector& z, const Vector& pi) {
  const auto K = pi.size();
  Matrix dz(K, K);
  switch (rule.kind()) {
    case RuleKind::exponential:
    case RuleKind::odds_ratio: {
      const double T = rule.kind() == RuleKind::exponential ? rule.spread() : 1.0;
      dz = -T * pi * pi.transpose();
      dz.diagonal() += T * pi;
      break;
    }
    case RuleKind::ratio_of_g: {
      // d log G
      Vector dlog(K);
      for (Eigen::Index j = 0; j < K; ++j) {
        dlog(j) = rule.ratio_function() == RatioFunction::exponential
                      ? 1.0
                      : 2.0 * z(j) / (1.0 + z(j) * z(j));
      }
      dz = -pi * (pi.array() * dlog.array()).matrix().transpose();
      dz.diagonal() += (pi.array() * dlog.array()).matrix();
      break;
    }
    case RuleKind::two_arm_difference: {
      const double g1 = difference_g(rule.difference_function(), rule.spread(), z(0) - z(1)).second;
      const double g2 = difference_g(rule.difference_function(), rule.spread(), z(1) - z(0)).second;
      dz << g1, -g1, -g2, g2;
      break;
    }
    default:
      throw Error("score_jacobian: unsupported rule kind");
  }
  return dz;
}

}  // namespace

double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double standard_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

AllocationRule AllocationRule::ratio_of_g(int arms, int dimension, RatioFunction g) {
  require_shape(arms, dimension);
  AllocationRule r(RuleKind::ratio_of_g, arms, dimension);
  r.ratio_fn_ = g;
  r.name_ = g == RatioFunction::exponential ? "ratio_of_g(exp)" : "ratio_of_g(1+z^2)";
  return r;
}

AllocationRule AllocationRule::exponential(int arms, int dimension, double spread) {
  require_positive_spread(spread);
  require_shape(arms, dimension);
  AllocationRule r(RuleKind::exponential, arms, dimension);
  r.spread_ = spread;
  r.name_ = "exponential";
  return r;
}

AllocationRule AllocationRule::two_arm_difference(int dimension, DifferenceFunction g,
                                                  double spread) {
  require_positive_spread(spread);
  AllocationRule r(RuleKind::two_arm_difference, 2, dimension);
  r.difference_fn_ = g;
  r.spread_ = spread;
  r.name_ = "two_arm_difference";
  return r;
}

AllocationRule AllocationRule::odds_ratio(int dimension) {
  AllocationRule r(RuleKind::odds_ratio, 2, dimension);
  r.name_ = "odds_ratio";
  return r;
}

AllocationRule AllocationRule::covariate_free_normal(int dimension, double spread) {
  require_positive_spread(spread);
  AllocationRule r(RuleKind::covariate_free_normal, 2, dimension);
  r.spread_ = spread;
  r.uses_covariate_ = false;
  r.name_ = "covariate_free_normal";
  return r;
}

AllocationRule AllocationRule::custom(int arms, int dimension, ProbabilityFn fn,
                                      bool uses_covariate, std::string name) {
  if (!fn) throw ConfigError("rule", "custom rule requires a probability function");
  require_shape(arms, dimension);
  AllocationRule r(RuleKind::custom, arms, dimension);
  r.custom_ = std::move(fn);
  r.uses_covariate_ = uses_covariate;
  r.name_ = std::move(name);
  return r;
}

std::vector<std::string_view> supported_rule_kinds() {
  return {"ratio_of_g", "exponential", "two_arm_difference", "odds_ratio",
          "covariate_free_normal"};
}

Vector probabilities(const AllocationRule& rule, const Matrix& theta_star, const Vector& x) {
  check_shapes(rule, theta_star, x);
  switch (rule.kind()) {
    case RuleKind::exponential:
      return floor_probabilities(softmax(rule.spread() * (theta_star * x)));
    case RuleKind::odds_ratio:
      return floor_probabilities(softmax(theta_star * x));
    case RuleKind::ratio_of_g: {
      const Vector z = theta_star * x;
      if (rule.ratio_function() == RatioFunction::exponential) {
        return floor_probabilities(softmax(z));
      }
      Vector g = (1.0 + z.array().square()).matrix();
      return floor_probabilities(g / g.sum());
    }
    case RuleKind::two_arm_difference: {
      const Vector z = theta_star * x;
      Vector p(2);
      p(0) = difference_g(rule.difference_function(), rule.spread(), z(0) - z(1)).first;
      p(1) = difference_g(rule.difference_function(), rule.spread(), z(1) - z(0)).first;
      return floor_probabilities(p);
    }
    case RuleKind::covariate_free_normal: {
      const double u = (theta_star(0, 0) - theta_star(1, 0)) / rule.spread();
      Vector p(2);
      p(0) = standard_normal_cdf(u);
      p(1) = standard_normal_cdf(-u);
      return floor_probabilities(p);
    }
    case RuleKind::custom: {
      Vector p = rule.custom_function()(theta_star, x);
      if (p.size() != rule.arm_count()) {
        throw DimensionError("custom rule returned " + std::to_string(p.size()) +
                             " probabilities for " + std::to_string(rule.arm_count()) + " arms");
      }
      return floor_probabilities(std::move(p));
    }
  }
  throw Error("unknown rule kind");
}

Matrix jacobian(const AllocationRule& rule, const Matrix& theta_star, const Vector& x) {
  check_shapes(rule, theta_star, x);
  const int K = rule.arm_count();
  const int d = rule.dimension();
  Matrix jac = Matrix::Zero(K, K * d);
  switch (rule.kind()) {
    case RuleKind::custom:
      return finite_difference_jacobian(rule, theta_star, x);
    case RuleKind::covariate_free_normal: {
      const double u = (theta_star(0, 0) - theta_star(1, 0)) / rule.spread();
      const double g = standard_normal_pdf(u) / rule.spread();
      jac(0, 0) = g;
      jac(0, d) = -g;
      jac(1, 0) = -g;
      jac(1, d) = g;
      return jac;
    }
    default: {
      const Vector z = theta_star * x;
      const Vector pi = probabilities(rule, theta_star, x);
      const Matrix dz = score_jacobian(rule, z, pi);
      for (int j = 0; j < K; ++j) {
        jac.block(0, j * d, K, d) = dz.col(j) * x.transpose();
      }
      return jac;
    }
  }
}

Matrix finite_difference_jacobian(const AllocationRule& rule, const Matrix& theta_star,
                                  const Vector& x, double step) {
  const int K = rule.arm_count();
  const int d = rule.dimension();
  Matrix jac(K, K * d);
  Matrix probe = theta_star;
  for (int j = 0; j < K; ++j) {
    for (int l = 0; l < d; ++l) {
      const double saved = probe(j, l);
      probe(j, l) = saved + step;
      const Vector up = probabilities(rule, probe, x);
      probe(j, l) = saved - step;
      const Vector down = probabilities(rule, probe, x);
      probe(j, l) = saved;
      jac.col(j * d + l) = (up - down) / (2.0 * step);
    }
  }
  return jac;
}

Matrix arm_block(const Matrix& full_jacobian, int k, int dimension) {
  return full_jacobian.middleCols(static_cast<Eigen::Index>(k) * dimension, dimension);
}

}  // namespace cara
