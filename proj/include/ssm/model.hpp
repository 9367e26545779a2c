#pragma once

#include "ssm/numerics.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace ssm {

using Triangle = std::array<std::int32_t, 3>;
using Triangulation = std::vector<Triangle>;
using Metadata = std::map<std::string, std::string>;

/// Per-entry tolerance of the basis^T * basis = I check.
inline constexpr double kOrthonormalityTolerance = 1e-5;

/// Components whose variance falls below this fraction of the largest one
/// are dropped when a model is built or loaded.
inline constexpr double kNegligibleVarianceRatio = 1e-12;

/// Latent weights of the principal components; standard normal under the prior.
struct Coefficients
{
    Vector values;

    Coefficients() = default;
    explicit Coefficients(Vector v) : values(std::move(v)) {}

    static Coefficients zero(Eigen::Index count) { return Coefficients(Vector::Zero(count)); }
    Eigen::Index size() const { return values.size(); }

    friend bool operator==(const Coefficients& a, const Coefficients& b)
    {
        return a.values.size() == b.values.size() && a.values == b.values;
    }
};

/// Vertex positions stacked as (x0, y0, z0, x1, ...) plus triangle indices.
struct TriangleMesh
{
    Vector positions;
    Triangulation triangles;

    Eigen::Index num_vertices() const { return positions.size() / 3; }
    Eigen::Vector3d vertex(Eigen::Index i) const { return positions.segment<3>(3 * i); }

    /// Throws InvariantError for non-finite positions, a length not divisible
    /// by three, or out-of-range triangle indices.
    void validate() const;
};

/// Linear statistical shape model in absolute coordinates.
///
/// Instances are positions = mean + basis * diag(sqrt(variances)) * alpha. The
/// scaled basis (basis times standard deviations) is never stored; scaled_basis()
/// and scaled_rows() recompute it on demand.
class ShapeModel
{
public:
    ShapeModel() = default;

    /// Validates every invariant and throws InvariantError (or DimensionError
    /// for inconsistent sizes) when one is violated.
    ShapeModel(Vector mean, Matrix basis, Vector variances, Triangulation triangles,
               Vector reference_points, double noise_variance = 0.0, Metadata metadata = {});

    const Vector& mean() const { return mean_; }
    const Matrix& basis() const { return basis_; }
    const Vector& variances() const { return variances_; }
    const Triangulation& triangles() const { return triangles_; }
    const Vector& reference_points() const { return reference_points_; }
    double noise_variance() const { return noise_variance_; }
    const Metadata& metadata() const { return metadata_; }

    Eigen::Index num_vertices() const { return mean_.size() / 3; }
    Eigen::Index num_components() const { return basis_.cols(); }

    Vector standard_deviations() const { return variances_.cwiseSqrt(); }

    /// basis * diag(sqrt(variances)), 3N x M.
    Matrix scaled_basis() const;

    /// The x, y, z rows of the scaled basis for each listed vertex, in list order.
    Matrix scaled_rows(std::span<const int> vertex_ids) const;

private:
    Vector mean_;
    Matrix basis_;
    Vector variances_;
    Triangulation triangles_;
    Vector reference_points_;
    double noise_variance_ = 0.0;
    Metadata metadata_;
};

/// Largest |(B^T B - I)_ij| of a column set; 0 for an empty basis.
double orthonormality_error(const Matrix& basis);

/// Drops trailing components whose variance is below kNegligibleVarianceRatio
/// times the largest (or that are not positive). Expects nonincreasing variances.
std::pair<Matrix, Vector> drop_negligible_components(const Matrix& basis, const Vector& variances);

/// positions = mean + Q * alpha, triangulation copied from the model.
TriangleMesh instance(const ShapeModel& model, const Coefficients& alpha);

TriangleMesh mean_shape(const ShapeModel& model);

/// Standard-normal coefficients drawn from a generator seeded with `seed`.
Coefficients sample_coefficients(Eigen::Index count, std::uint64_t seed);

struct Sample
{
    Coefficients alpha;
    TriangleMesh mesh;
};

Sample sample_random(const ShapeModel& model, std::uint64_t seed);

/// PCA model from shapes in dense correspondence.
///
/// Uses the 1/n covariance normalization and factors the centered data
/// matrix directly. At most rank_limit components are kept when given.
/// Throws std::invalid_argument for fewer than two shapes and DimensionError
/// for inconsistent lengths.
ShapeModel build_model(std::span<const Vector> shapes, Triangulation triangles, Vector reference_points,
                       std::optional<Eigen::Index> rank_limit = std::nullopt, Metadata metadata = {});

} // namespace ssm
