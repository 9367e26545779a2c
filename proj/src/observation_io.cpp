#include "ssm/observation_io.hpp"

#include <cmath>
#include <limits>

namespace ssm {

using nlohmann::json;

ObservationSpec observation_spec_from_json(const json& j)
{
    if (!j.is_object()) {
        throw ObservationFormatError("observation must be a JSON object");
    }
    ObservationSpec spec;
    const auto id = j.find("vertex_id");
    if (id == j.end() || !id->is_number_integer()) {
        throw ObservationFormatError("observation needs an integer \"vertex_id\"");
    }
    const auto raw_id = id->get<long long>();
    if (raw_id < 0 || raw_id > std::numeric_limits<int>::max()) {
        throw ObservationFormatError("vertex_id " + std::to_string(raw_id) + " out of range");
    }
    spec.vertex_id = static_cast<int>(raw_id);

    if (const auto kind = j.find("kind"); kind != j.end()) {
        if (!kind->is_string()) {
            throw ObservationFormatError("\"kind\" must be \"moved\" or \"pinned\"");
        }
        const auto parsed = parse_observation_kind(kind->get<std::string>());
        if (!parsed) {
            throw ObservationFormatError("unknown observation kind \"" + kind->get<std::string>() + "\"");
        }
        spec.kind = *parsed;
    }

    if (const auto target = j.find("target"); target != j.end() && !target->is_null()) {
        if (!target->is_array() || target->size() != 3) {
            throw ObservationFormatError("\"target\" of vertex " + std::to_string(spec.vertex_id) +
                                         " must be an array of 3 numbers");
        }
        Eigen::Vector3d t;
        for (int c = 0; c < 3; ++c) {
            const auto& v = (*target)[static_cast<std::size_t>(c)];
            if (!v.is_number() || !std::isfinite(v.get<double>())) {
                throw ObservationFormatError("\"target\" of vertex " + std::to_string(spec.vertex_id) +
                                             " must contain finite numbers");
            }
            t(c) = v.get<double>();
        }
        spec.target = t;
    }
    if (spec.kind == ObservationKind::moved && !spec.target) {
        throw ObservationFormatError("moved observation of vertex " + std::to_string(spec.vertex_id) +
                                     " needs a target");
    }
    return spec;
}

ObservationDocument observation_document_from_json(const json& j)
{
    if (!j.is_object()) {
        throw ObservationFormatError("observation document must be a JSON object");
    }
    ObservationDocument doc;
    if (const auto list = j.find("observations"); list != j.end()) {
        if (!list->is_array()) {
            throw ObservationFormatError("\"observations\" must be an array");
        }
        for (const auto& item : *list) {
            doc.observations.push_back(observation_spec_from_json(item));
        }
    }
    if (const auto rcond = j.find("rcond"); rcond != j.end() && !rcond->is_null()) {
        if (!rcond->is_number()) {
            throw ObservationFormatError("\"rcond\" must be a number");
        }
        const double value = rcond->get<double>();
        if (!(value > 0.0 && value < 1.0)) {
            throw ObservationFormatError("\"rcond\" must lie in (0, 1)");
        }
        doc.rcond = value;
    }
    return doc;
}

ObservationDocument parse_observation_document(std::string_view text)
{
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ObservationFormatError(std::string("observation file is not valid JSON: ") + e.what());
    }
    return observation_document_from_json(j);
}

Observation resolve_observation(const ObservationSpec& spec, const TriangleMesh& current)
{
    if (spec.vertex_id >= current.num_vertices()) {
        throw std::out_of_range("vertex id " + std::to_string(spec.vertex_id) + " outside [0, " +
                                std::to_string(current.num_vertices()) + ")");
    }
    Observation obs;
    obs.vertex_id = spec.vertex_id;
    obs.kind = spec.kind;
    obs.target = spec.target ? *spec.target : current.vertex(spec.vertex_id);
    return obs;
}

ObservationSet resolve_observations(const ObservationDocument& doc, const TriangleMesh& current)
{
    ObservationSet set;
    for (const auto& spec : doc.observations) {
        set.insert(resolve_observation(spec, current));
    }
    return set;
}

json observation_to_json(const Observation& obs)
{
    return json{{"vertex_id", obs.vertex_id},
                {"target", {obs.target.x(), obs.target.y(), obs.target.z()}},
                {"kind", std::string(to_string(obs.kind))}};
}

json observations_to_json(const ObservationSet& obs, std::optional<double> rcond)
{
    json list = json::array();
    for (const auto& [id, o] : obs) {
        list.push_back(observation_to_json(o));
    }
    json out{{"observations", std::move(list)}};
    if (rcond) {
        out["rcond"] = *rcond;
    }
    return out;
}

} // namespace ssm
