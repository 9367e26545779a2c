#include "ssm/numerics.hpp"

#include "ssm/errors.hpp"

#include <Eigen/SVD>

#include <string>

namespace ssm {

namespace {

std::string shape_of(const Matrix& a)
{
    return std::to_string(a.rows()) + "x" + std::to_string(a.cols());
}

} // namespace

Svd svd(const Matrix& a)
{
    const Eigen::Index r = std::min(a.rows(), a.cols());
    if (r == 0) {
        return {Matrix::Zero(a.rows(), 0), Vector::Zero(0), Matrix::Zero(a.cols(), 0)};
    }
    if (!a.allFinite()) {
        throw NumericalError("svd: non-finite entries in " + shape_of(a) + " matrix");
    }

    Eigen::BDCSVD<Matrix> dec(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (dec.info() != Eigen::Success) {
        throw NumericalError("svd: decomposition of " + shape_of(a) + " matrix did not converge");
    }
    Svd out{dec.matrixU(), dec.singularValues(), dec.matrixV()};
    if (!out.u.allFinite() || !out.v.allFinite() || !out.singular_values.allFinite()) {
        throw NumericalError("svd: non-finite factors for " + shape_of(a) + " matrix");
    }
    return out;
}

Eigen::Index numerical_rank(const Vector& singular_values, double rcond)
{
    if (singular_values.size() == 0) {
        return 0;
    }
    const double cutoff = rcond * singular_values(0);
    Eigen::Index rank = 0;
    while (rank < singular_values.size() && singular_values(rank) > cutoff) {
        ++rank;
    }
    return rank;
}

Matrix pinv(const Matrix& a, double rcond)
{
    if (!(rcond > 0.0 && rcond < 1.0)) {
        throw std::invalid_argument("pinv: rcond must lie in (0, 1), got " + std::to_string(rcond));
    }
    const Svd dec = svd(a);
    const Eigen::Index rank = numerical_rank(dec.singular_values, rcond);
    if (rank == 0) {
        return Matrix::Zero(a.cols(), a.rows());
    }
    const Vector inv_s = dec.singular_values.head(rank).cwiseInverse();
    return dec.v.leftCols(rank) * inv_s.asDiagonal() * dec.u.leftCols(rank).transpose();
}

} // namespace ssm
