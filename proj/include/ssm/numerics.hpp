#pragma once

#include <Eigen/Core>

namespace ssm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Default relative cut-off for singular values in pinv().
inline constexpr double kDefaultRcond = 1e-10;

/// Thin singular value decomposition a = u * diag(singular_values) * v^T.
///
/// For an m x n input with r = min(m, n), u is m x r, v is n x r and the
/// singular values are nonincreasing and nonnegative.
struct Svd
{
    Matrix u;
    Vector singular_values;
    Matrix v;
};

/// Throws NumericalError on non-finite input or when the decomposition
/// does not converge; the message carries the matrix dimensions.
Svd svd(const Matrix& a);

/// Moore-Penrose pseudo-inverse of the rank-truncated input.
///
/// Singular values not exceeding rcond * max(s) are treated as zero. rcond
/// must lie in (0, 1). The result has the transposed shape of a.
Matrix pinv(const Matrix& a, double rcond = kDefaultRcond);

/// Index of singular values kept by pinv(): count of s_i > rcond * s_0.
Eigen::Index numerical_rank(const Vector& singular_values, double rcond);

} // namespace ssm
