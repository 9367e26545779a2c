#pragma once

#include "ssm/model.hpp"

#include <map>
#include <optional>
#include <stdexcept>
#include <stop_token>
#include <string_view>
#include <vector>

namespace ssm {

enum class ObservationKind { moved, pinned };

std::string_view to_string(ObservationKind kind);
std::optional<ObservationKind> parse_observation_kind(std::string_view text);

/// A vertex constrained to an absolute target position.
///
/// Pinned observations keep a vertex where it is currently displayed, so their
/// target is the vertex position at the time the observation was made.
struct Observation
{
    int vertex_id = 0;
    Eigen::Vector3d target = Eigen::Vector3d::Zero();
    ObservationKind kind = ObservationKind::moved;

    friend bool operator==(const Observation&, const Observation&) = default;
};

class DuplicateObservation : public std::invalid_argument
{
public:
    explicit DuplicateObservation(int vertex_id);
    int vertex_id() const { return vertex_id_; }

private:
    int vertex_id_;
};

/// Observations keyed by vertex id; iteration is always in ascending id order.
class ObservationSet
{
public:
    using container = std::map<int, Observation>;

    ObservationSet() = default;

    /// Throws DuplicateObservation if the vertex is already observed and
    /// InvariantError for a negative id or a non-finite target.
    void insert(const Observation& obs);
    bool erase(int vertex_id);
    void clear() { items_.clear(); }

    bool contains(int vertex_id) const { return items_.count(vertex_id) != 0; }
    const Observation* find(int vertex_id) const;

    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    std::vector<int> vertex_ids() const;

    auto begin() const { return items_.cbegin(); }
    auto end() const { return items_.cend(); }

    friend bool operator==(const ObservationSet&, const ObservationSet&) = default;

private:
    container items_;
};

/// Mean entries and scaled-basis rows for the observed vertices.
struct SubModel
{
    Vector mean_p;
    Matrix basis_q_p;
    std::vector<int> index_map;
};

/// Throws std::invalid_argument for an empty set and std::out_of_range for an
/// unknown vertex id.
SubModel select_rows(const ShapeModel& model, const ObservationSet& obs);

/// alpha = pinv(Q_p, rcond) * (s_p - mu_p), with s_p stacked in index_map order.
Coefficients solve_alpha(const SubModel& sub, const ObservationSet& obs, double rcond = kDefaultRcond);

struct PosteriorResult
{
    TriangleMesh mesh;
    Coefficients alpha;
    /// False when the observation set was empty and the fallback state was returned.
    bool applied = false;
};

/// Most probable model shape under the observations.
///
/// An empty observation set returns (current_mesh, current_alpha) unchanged.
/// The stop token is polled between the selection, solve and instancing
/// steps; a requested stop raises Cancelled.
PosteriorResult posterior_mean(const ShapeModel& model, const ObservationSet& obs, double rcond,
                               const TriangleMesh& current_mesh, const Coefficients& current_alpha,
                               std::stop_token stop = {});

/// Stateless variant: the fallback state is the model mean.
PosteriorResult posterior_mean(const ShapeModel& model, const ObservationSet& obs, double rcond = kDefaultRcond,
                               std::stop_token stop = {});

} // namespace ssm
