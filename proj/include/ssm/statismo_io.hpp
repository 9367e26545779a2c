#pragma once

#include "ssm/model.hpp"

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ssm {

/// How the file's pcaBasis relates to pcaVariance.
enum class BasisConvention {
    automatic,   ///< detect on load
    orthonormal, ///< columns are unit eigenvectors (Statismo 0.9)
    prescaled,   ///< columns already multiplied by sqrt(variance)
};

std::string_view to_string(BasisConvention c);

/// One problem found in a Statismo file. `code` is a stable identifier
/// (missing_dataset, dimension_mismatch, ...), `path` the HDF5 object involved.
struct Violation
{
    std::string code;
    std::string path;
    std::string message;
};

using ValidationReport = std::vector<Violation>;

class StatismoError : public std::runtime_error
{
public:
    explicit StatismoError(ValidationReport report);
    const ValidationReport& report() const { return report_; }

private:
    ValidationReport report_;
};

struct LoadedModel
{
    ShapeModel model;
    /// Convention the stored basis was found (or forced) to use.
    BasisConvention stored_convention = BasisConvention::orthonormal;
    int major_version = 0;
    int minor_version = 0;
};

/// Reads a Statismo HDF5 file image. Throws StatismoError carrying the full
/// validation report when the file cannot be turned into a ShapeModel.
LoadedModel load_statismo_detailed(std::string_view bytes, BasisConvention convention = BasisConvention::automatic);

ShapeModel load_statismo(std::string_view bytes, BasisConvention convention = BasisConvention::automatic);

/// Writes a version 0.9 file image: float32 datasets, orthonormal basis with
/// separate variances, 3 x N points, 3 x C int32 cells. Metadata entries are
/// written under /modelinfo as string datasets ("a/b") or attributes ("a/b@name").
std::string save_statismo(const ShapeModel& model);

/// Never throws for malformed input; every problem becomes a report entry.
ValidationReport validate_statismo(std::string_view bytes, BasisConvention convention = BasisConvention::automatic);

} // namespace ssm
