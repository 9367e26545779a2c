#include "ssm/posterior.hpp"
#include "ssm/statismo_io.hpp"

#include "support/files.hpp"
#include "support/synthetic.hpp"

#include "doctest.h"

#include <algorithm>

using namespace ssm;
using namespace ssm::testing;

namespace {

bool has_code(const ValidationReport& report, const std::string& code)
{
    return std::any_of(report.begin(), report.end(), [&](const Violation& v) { return v.code == code; });
}

/// float32 storage bound: relative half-ulp plus an absolute floor for values near zero.
bool float_close(const Vector& a, const Vector& b, double tol = 1e-6)
{
    if (a.size() != b.size()) return false;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        if (std::abs(a(i) - b(i)) > tol * std::max(1.0, std::abs(b(i)))) return false;
    }
    return true;
}

bool float_close(const Matrix& a, const Matrix& b, double tol = 1e-6)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return float_close(Vector(a.reshaped()), Vector(b.reshaped()), tol);
}

void check_golden(const ShapeModel& m)
{
    Vector mean(6);
    mean << 0, 0, 0, 1, 0, 0;
    Matrix basis = Matrix::Zero(6, 1);
    basis(1, 0) = 1.0;
    CHECK(m.num_vertices() == 2);
    CHECK(m.num_components() == 1);
    CHECK(m.mean() == mean);
    CHECK(m.basis() == basis);
    CHECK(m.variances()(0) == 4.0);
    CHECK(m.noise_variance() == 0.5);
    CHECK(m.reference_points() == mean);
    CHECK(m.triangles() == Triangulation{{0, 1, 0}});
}

} // namespace

TEST_CASE("golden file loads with exact fields")
{
    const LoadedModel loaded = load_statismo_detailed(data_file("golden_n2_m1.h5"));
    check_golden(loaded.model);
    CHECK(loaded.stored_convention == BasisConvention::orthonormal);
    CHECK(loaded.major_version == 0);
    CHECK(loaded.minor_version == 9);

    Vector a(1);
    a << 1.0;
    Vector expected(6);
    expected << 0, 2, 0, 1, 0, 0;
    CHECK(instance(loaded.model, Coefficients(a)).positions == expected);
}

TEST_CASE("golden metadata is preserved")
{
    const Metadata meta = load_statismo(data_file("golden_n2_m1.h5")).metadata();
    CHECK(meta.at("build-time") == "2024-01-01T00:00:00");
    CHECK(meta.at("modelBuilder-0/builderName") == "golden");
}

TEST_CASE("prescaled golden file is detected and normalized")
{
    const LoadedModel loaded = load_statismo_detailed(data_file("golden_n2_m1_prescaled.h5"));
    CHECK(loaded.stored_convention == BasisConvention::prescaled);
    check_golden(loaded.model);
}

TEST_CASE("both stored conventions yield the same model")
{
    const LoadedModel ortho = load_statismo_detailed(data_file("conventions_orthonormal.h5"));
    const LoadedModel pre = load_statismo_detailed(data_file("conventions_prescaled.h5"));
    CHECK(ortho.stored_convention == BasisConvention::orthonormal);
    CHECK(pre.stored_convention == BasisConvention::prescaled);
    CHECK(ortho.model.num_vertices() == 10);
    CHECK(ortho.model.num_components() == 4);
    CHECK(float_close(pre.model.basis(), ortho.model.basis()));
    CHECK(pre.model.variances() == ortho.model.variances());
    CHECK(pre.model.triangles() == ortho.model.triangles());
    CHECK(ortho.model.triangles().size() == 8);
    CHECK(ortho.model.triangles()[3] == Triangle{3, 4, 5});
}

TEST_CASE("convention detection is deterministic")
{
    const std::string bytes = data_file("conventions_prescaled.h5");
    for (int i = 0; i < 5; ++i) {
        CHECK(load_statismo_detailed(bytes).stored_convention == BasisConvention::prescaled);
    }
}

TEST_CASE("a forced convention overrides detection")
{
    const std::string bytes = data_file("golden_n2_m1_prescaled.h5");
    // Read as orthonormal, the column has norm 2 and the file is invalid.
    const ValidationReport report = validate_statismo(bytes, BasisConvention::orthonormal);
    CHECK(has_code(report, "non_orthonormal_basis"));
    CHECK_THROWS_AS(load_statismo(bytes, BasisConvention::orthonormal), StatismoError);

    const LoadedModel forced = load_statismo_detailed(bytes, BasisConvention::prescaled);
    CHECK(forced.stored_convention == BasisConvention::prescaled);
    check_golden(forced.model);
}

TEST_CASE("out-of-range cell is the only violation")
{
    const std::string bytes = data_file("golden_bad_cell.h5");
    const ValidationReport report = validate_statismo(bytes);
    REQUIRE(report.size() == 1);
    CHECK(report[0].code == "cell_index_out_of_range");
    CHECK(report[0].message.find("cell 0") != std::string::npos);
    try {
        load_statismo(bytes);
        FAIL("expected StatismoError");
    } catch (const StatismoError& e) {
        CHECK(e.report().size() == 1);
    }
    CHECK(validate_statismo(data_file("golden_n2_m1.h5")).empty());
}

TEST_CASE("truncated and empty inputs are container violations")
{
    const std::string bytes = data_file("golden_n2_m1.h5");
    for (std::size_t cut : {std::size_t{0}, std::size_t{8}, std::size_t{512}, bytes.size() / 2}) {
        const ValidationReport report = validate_statismo(std::string_view(bytes).substr(0, cut));
        REQUIRE_FALSE(report.empty());
        CHECK(has_code(report, "container"));
    }
    CHECK(has_code(validate_statismo("plain text"), "container"));
}

TEST_CASE("missing dataset is named in the error")
{
    try {
        load_statismo(data_file("golden_missing_mean.h5"));
        FAIL("expected StatismoError");
    } catch (const StatismoError& e) {
        CHECK(has_code(e.report(), "missing_dataset"));
        CHECK(std::string(e.what()).find("/model/mean") != std::string::npos);
    }
}

TEST_CASE("non-mesh representer is rejected")
{
    const ValidationReport report = validate_statismo(data_file("golden_point_set.h5"));
    CHECK(has_code(report, "non_mesh_representer"));
}

TEST_CASE("nested shape layout loads")
{
    const ShapeModel m = load_statismo(data_file("golden_nested_shape.h5"));
    check_golden(m);
}

TEST_CASE("save then load round-trips within float32")
{
    std::mt19937_64 rng(40);
    for (int trial = 0; trial < 5; ++trial) {
        const ShapeModel m0 = random_model(30 + 10 * trial, 1 + trial * 2, rng);
        const ShapeModel m(m0.mean(), m0.basis(), m0.variances(), m0.triangles(), m0.reference_points(), 0.25,
                           {{"build-time", "now"}, {"modelBuilder-0/builderName", "synthetic"},
                            {"modelBuilder-0@version", "3"}, {"@origin", "unit"}});
        const LoadedModel loaded = load_statismo_detailed(save_statismo(m));
        CHECK(loaded.major_version == 0);
        CHECK(loaded.minor_version == 9);
        CHECK(loaded.stored_convention == BasisConvention::orthonormal);
        CHECK(float_close(loaded.model.mean(), m.mean()));
        CHECK(float_close(loaded.model.basis(), m.basis()));
        CHECK(float_close(loaded.model.variances(), m.variances()));
        CHECK(float_close(loaded.model.reference_points(), m.reference_points()));
        CHECK(loaded.model.noise_variance() == 0.25);
        CHECK(loaded.model.triangles() == m.triangles());
        CHECK(loaded.model.metadata() == m.metadata());
        CHECK(validate_statismo(save_statismo(m)).empty());
    }
}

TEST_CASE("model without components round-trips")
{
    std::mt19937_64 rng(41);
    const Vector mean = gaussian_vector(12, rng, 10.0);
    const ShapeModel m(mean, Matrix(12, 0), Vector(0), strip_triangles(4), mean);
    const ShapeModel loaded = load_statismo(save_statismo(m));
    CHECK(loaded.num_components() == 0);
    CHECK(float_close(instance(loaded, Coefficients::zero(0)).positions, mean));
}

TEST_CASE("built model gives the same posterior after a save and load")
{
    std::mt19937_64 rng(42);
    std::vector<Vector> shapes;
    for (int i = 0; i < 15; ++i) shapes.push_back(gaussian_vector(90, rng, 10.0));
    const ShapeModel built = build_model(shapes, strip_triangles(30), {});
    const ShapeModel loaded = load_statismo(save_statismo(built));

    ObservationSet obs;
    for (int id : {1, 9, 17, 25}) {
        obs.insert({id, built.mean().segment<3>(3 * id) + gaussian_vector(3, rng), ObservationKind::moved});
    }
    const Vector a = posterior_mean(built, obs).mesh.positions;
    const Vector b = posterior_mean(loaded, obs).mesh.positions;
    CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-5 * std::max(1.0, a.cwiseAbs().maxCoeff()));
}
