#include "ssm/model.hpp"

#include "ssm/errors.hpp"

#include <cmath>
#include <random>
#include <string>

namespace ssm {

namespace {

void check_triangles(const Triangulation& triangles, Eigen::Index num_vertices)
{
    for (std::size_t t = 0; t < triangles.size(); ++t) {
        for (const auto idx : triangles[t]) {
            if (idx < 0 || idx >= num_vertices) {
                throw InvariantError("triangle " + std::to_string(t) + " references vertex " + std::to_string(idx) +
                                     " outside [0, " + std::to_string(num_vertices) + ")");
            }
        }
    }
}

} // namespace

void TriangleMesh::validate() const
{
    if (positions.size() % 3 != 0) {
        throw InvariantError("mesh position count " + std::to_string(positions.size()) + " is not a multiple of 3");
    }
    if (!positions.allFinite()) {
        throw InvariantError("mesh has non-finite positions");
    }
    check_triangles(triangles, num_vertices());
}

ShapeModel::ShapeModel(Vector mean, Matrix basis, Vector variances, Triangulation triangles, Vector reference_points,
                       double noise_variance, Metadata metadata)
    : mean_(std::move(mean)), basis_(std::move(basis)), variances_(std::move(variances)),
      triangles_(std::move(triangles)), reference_points_(std::move(reference_points)),
      noise_variance_(noise_variance), metadata_(std::move(metadata))
{
    if (mean_.size() % 3 != 0) {
        throw DimensionError("mean length " + std::to_string(mean_.size()) + " is not a multiple of 3");
    }
    if (basis_.rows() != mean_.size()) {
        throw DimensionError("basis has " + std::to_string(basis_.rows()) + " rows, mean has " +
                             std::to_string(mean_.size()) + " entries");
    }
    if (variances_.size() != basis_.cols()) {
        throw DimensionError("basis has " + std::to_string(basis_.cols()) + " columns but " +
                             std::to_string(variances_.size()) + " variances were given");
    }
    if (reference_points_.size() != mean_.size()) {
        throw DimensionError("reference points have " + std::to_string(reference_points_.size()) +
                             " entries, mean has " + std::to_string(mean_.size()));
    }
    if (!mean_.allFinite() || !basis_.allFinite() || !variances_.allFinite() || !reference_points_.allFinite()) {
        throw InvariantError("model contains non-finite values");
    }
    if (!(noise_variance_ >= 0.0) || !std::isfinite(noise_variance_)) {
        throw InvariantError("noise variance must be finite and >= 0");
    }
    for (Eigen::Index i = 0; i < variances_.size(); ++i) {
        if (variances_(i) < 0.0) {
            throw InvariantError("variance " + std::to_string(i) + " is negative");
        }
        if (i > 0 && variances_(i) > variances_(i - 1)) {
            throw InvariantError("variances are not sorted nonincreasing at component " + std::to_string(i));
        }
    }
    const double err = orthonormality_error(basis_);
    if (err > kOrthonormalityTolerance) {
        throw InvariantError("basis columns are not orthonormal (max |B^T B - I| = " + std::to_string(err) + ")");
    }
    check_triangles(triangles_, num_vertices());
}

Matrix ShapeModel::scaled_basis() const
{
    return basis_ * standard_deviations().asDiagonal();
}

Matrix ShapeModel::scaled_rows(std::span<const int> vertex_ids) const
{
    const Vector sd = standard_deviations();
    Matrix rows(3 * static_cast<Eigen::Index>(vertex_ids.size()), num_components());
    for (std::size_t k = 0; k < vertex_ids.size(); ++k) {
        const Eigen::Index v = vertex_ids[k];
        if (v < 0 || v >= num_vertices()) {
            throw std::out_of_range("vertex id " + std::to_string(v) + " outside [0, " +
                                    std::to_string(num_vertices()) + ")");
        }
        rows.middleRows<3>(3 * static_cast<Eigen::Index>(k)) = basis_.middleRows<3>(3 * v) * sd.asDiagonal();
    }
    return rows;
}

double orthonormality_error(const Matrix& basis)
{
    if (basis.cols() == 0) {
        return 0.0;
    }
    const Matrix gram = basis.transpose() * basis;
    return (gram - Matrix::Identity(basis.cols(), basis.cols())).cwiseAbs().maxCoeff();
}

std::pair<Matrix, Vector> drop_negligible_components(const Matrix& basis, const Vector& variances)
{
    Eigen::Index keep = 0;
    if (variances.size() > 0) {
        const double cutoff = kNegligibleVarianceRatio * variances.maxCoeff();
        while (keep < variances.size() && variances(keep) > 0.0 && variances(keep) >= cutoff) {
            ++keep;
        }
    }
    return {basis.leftCols(keep), variances.head(keep)};
}

TriangleMesh instance(const ShapeModel& model, const Coefficients& alpha)
{
    if (alpha.size() != model.num_components()) {
        throw DimensionError("expected " + std::to_string(model.num_components()) + " coefficients, got " +
                             std::to_string(alpha.size()));
    }
    if (!alpha.values.allFinite()) {
        throw InvariantError("coefficients contain non-finite values");
    }
    TriangleMesh mesh;
    mesh.positions = model.mean() + model.basis() * model.standard_deviations().cwiseProduct(alpha.values);
    mesh.triangles = model.triangles();
    return mesh;
}

TriangleMesh mean_shape(const ShapeModel& model)
{
    return instance(model, Coefficients::zero(model.num_components()));
}

Coefficients sample_coefficients(Eigen::Index count, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector values(count);
    for (Eigen::Index i = 0; i < count; ++i) {
        values(i) = normal(rng);
    }
    return Coefficients(std::move(values));
}

Sample sample_random(const ShapeModel& model, std::uint64_t seed)
{
    Sample s;
    s.alpha = sample_coefficients(model.num_components(), seed);
    s.mesh = instance(model, s.alpha);
    return s;
}

ShapeModel build_model(std::span<const Vector> shapes, Triangulation triangles, Vector reference_points,
                       std::optional<Eigen::Index> rank_limit, Metadata metadata)
{
    if (shapes.size() < 2) {
        throw std::invalid_argument("build_model needs at least 2 shapes, got " + std::to_string(shapes.size()));
    }
    const Eigen::Index dim = shapes.front().size();
    const auto n = static_cast<Eigen::Index>(shapes.size());
    Vector mean = Vector::Zero(dim);
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        if (shapes[i].size() != dim) {
            throw DimensionError("shape " + std::to_string(i) + " has length " + std::to_string(shapes[i].size()) +
                                 ", expected " + std::to_string(dim));
        }
        mean += shapes[i];
    }
    mean /= static_cast<double>(n);

    Matrix centered(dim, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        centered.col(i) = shapes[static_cast<std::size_t>(i)] - mean;
    }

    // Sigma = X X^T / n = U (S^2 / n) U^T for the thin SVD X = U S V^T.
    const Svd dec = svd(centered);
    Vector variances = dec.singular_values.array().square() / static_cast<double>(n);
    auto [basis, kept] = drop_negligible_components(dec.u, variances);
    if (rank_limit && *rank_limit < kept.size()) {
        const Eigen::Index limit = std::max<Eigen::Index>(*rank_limit, 0);
        basis = Matrix(basis.leftCols(limit));
        kept = Vector(kept.head(limit));
    }

    // Deterministic signs: the largest-magnitude entry of each column is positive.
    for (Eigen::Index c = 0; c < basis.cols(); ++c) {
        Eigen::Index arg = 0;
        basis.col(c).cwiseAbs().maxCoeff(&arg);
        if (basis(arg, c) < 0.0) {
            basis.col(c) *= -1.0;
        }
    }

    if (reference_points.size() == 0) {
        reference_points = mean;
    }
    return ShapeModel(std::move(mean), std::move(basis), std::move(kept), std::move(triangles),
                      std::move(reference_points), 0.0, std::move(metadata));
}

} // namespace ssm
