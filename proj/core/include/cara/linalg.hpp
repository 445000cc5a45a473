#pragma once

#include <vector>

#include <Eigen/Dense>

namespace cara {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Ratio of largest to smallest eigenvalue of a symmetric matrix; infinity
/// when the smallest eigenvalue is not positive.
double condition_number(const Matrix& symmetric);

double min_eigenvalue(const Matrix& symmetric);

/// Induced infinity norm (maximum absolute row sum).
double infinity_norm(const Matrix& m);

/// Inverse of a symmetric positive definite matrix, symmetrized.
Matrix spd_inverse(const Matrix& spd);

/// Block-diagonal assembly.
Matrix block_diagonal(const std::vector<Matrix>& blocks);

}  // namespace cara
