#include "ssm/posterior.hpp"

#include "ssm/errors.hpp"

#include <string>

namespace ssm {

std::string_view to_string(ObservationKind kind)
{
    return kind == ObservationKind::pinned ? "pinned" : "moved";
}

std::optional<ObservationKind> parse_observation_kind(std::string_view text)
{
    if (text == "moved") {
        return ObservationKind::moved;
    }
    if (text == "pinned") {
        return ObservationKind::pinned;
    }
    return std::nullopt;
}

DuplicateObservation::DuplicateObservation(int vertex_id)
    : std::invalid_argument("vertex " + std::to_string(vertex_id) + " is already observed"), vertex_id_(vertex_id)
{
}

void ObservationSet::insert(const Observation& obs)
{
    if (obs.vertex_id < 0) {
        throw InvariantError("negative vertex id " + std::to_string(obs.vertex_id));
    }
    if (!obs.target.allFinite()) {
        throw InvariantError("observation target for vertex " + std::to_string(obs.vertex_id) + " is not finite");
    }
    if (!items_.emplace(obs.vertex_id, obs).second) {
        throw DuplicateObservation(obs.vertex_id);
    }
}

bool ObservationSet::erase(int vertex_id)
{
    return items_.erase(vertex_id) != 0;
}

const Observation* ObservationSet::find(int vertex_id) const
{
    const auto it = items_.find(vertex_id);
    return it == items_.end() ? nullptr : &it->second;
}

std::vector<int> ObservationSet::vertex_ids() const
{
    std::vector<int> ids;
    ids.reserve(items_.size());
    for (const auto& [id, obs] : items_) {
        ids.push_back(id);
    }
    return ids;
}

SubModel select_rows(const ShapeModel& model, const ObservationSet& obs)
{
    if (obs.empty()) {
        throw std::invalid_argument("select_rows: observation set is empty");
    }
    SubModel sub;
    sub.index_map = obs.vertex_ids();
    sub.basis_q_p = model.scaled_rows(sub.index_map);
    sub.mean_p.resize(3 * static_cast<Eigen::Index>(sub.index_map.size()));
    for (std::size_t k = 0; k < sub.index_map.size(); ++k) {
        sub.mean_p.segment<3>(3 * static_cast<Eigen::Index>(k)) = model.mean().segment<3>(3 * sub.index_map[k]);
    }
    return sub;
}

Coefficients solve_alpha(const SubModel& sub, const ObservationSet& obs, double rcond)
{
    if (sub.index_map != obs.vertex_ids()) {
        throw std::invalid_argument("solve_alpha: sub-model was not built from this observation set");
    }
    Vector s_p(sub.mean_p.size());
    for (std::size_t k = 0; k < sub.index_map.size(); ++k) {
        s_p.segment<3>(3 * static_cast<Eigen::Index>(k)) = obs.find(sub.index_map[k])->target;
    }
    return Coefficients(pinv(sub.basis_q_p, rcond) * (s_p - sub.mean_p));
}

PosteriorResult posterior_mean(const ShapeModel& model, const ObservationSet& obs, double rcond,
                               const TriangleMesh& current_mesh, const Coefficients& current_alpha,
                               std::stop_token stop)
{
    if (obs.empty()) {
        return {current_mesh, current_alpha, false};
    }
    const auto check = [&stop] {
        if (stop.stop_requested()) {
            throw Cancelled();
        }
    };
    check();
    const SubModel sub = select_rows(model, obs);
    check();
    Coefficients alpha = solve_alpha(sub, obs, rcond);
    check();
    TriangleMesh mesh = instance(model, alpha);
    return {std::move(mesh), std::move(alpha), true};
}

PosteriorResult posterior_mean(const ShapeModel& model, const ObservationSet& obs, double rcond,
                               std::stop_token stop)
{
    return posterior_mean(model, obs, rcond, mean_shape(model), Coefficients::zero(model.num_components()),
                          std::move(stop));
}

} // namespace ssm
