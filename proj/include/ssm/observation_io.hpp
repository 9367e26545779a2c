#pragma once

#include "ssm/posterior.hpp"

#include "json.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ssm {

class ObservationFormatError : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// One entry of an observation file before pinned targets are resolved.
struct ObservationSpec
{
    int vertex_id = 0;
    std::optional<Eigen::Vector3d> target;
    ObservationKind kind = ObservationKind::moved;
};

/// {"observations":[{"vertex_id":..,"target":[x,y,z],"kind":"moved"|"pinned"}],"rcond":..}
struct ObservationDocument
{
    std::vector<ObservationSpec> observations;
    std::optional<double> rcond;
};

ObservationSpec observation_spec_from_json(const nlohmann::json& j);
ObservationDocument observation_document_from_json(const nlohmann::json& j);
ObservationDocument parse_observation_document(std::string_view text);

/// Pinned entries without a target take the vertex position in `current`.
/// Moved entries must carry a target. Throws std::out_of_range for vertex ids
/// outside the mesh.
Observation resolve_observation(const ObservationSpec& spec, const TriangleMesh& current);
ObservationSet resolve_observations(const ObservationDocument& doc, const TriangleMesh& current);

nlohmann::json observation_to_json(const Observation& obs);
nlohmann::json observations_to_json(const ObservationSet& obs, std::optional<double> rcond = std::nullopt);

} // namespace ssm
