#pragma once

#include "ssm/observation_io.hpp"
#include "ssm/posterior.hpp"
#include "ssm/statismo_io.hpp"

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ssm {

struct ServiceConfig
{
    std::size_t max_model_bytes = std::size_t{512} << 20;
    std::chrono::seconds session_ttl{30 * 60};
    double default_rcond = kDefaultRcond;
    /// Posteriors with 3N * M above this run on a worker thread.
    double async_threshold = 1e7;
    std::size_t history_depth = 64;
};

class SessionError : public std::runtime_error
{
public:
    enum class Kind { not_found, busy, too_large };

    SessionError(Kind kind, std::string message) : std::runtime_error(std::move(message)), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

struct SessionSummary
{
    std::string id;
    Eigen::Index num_vertices = 0;
    Eigen::Index num_components = 0;
    Vector variances;
    BasisConvention stored_convention = BasisConvention::orthonormal;
    std::string triangulation_fingerprint;
    std::uint64_t mesh_version = 0;
    Coefficients alpha;
    double rcond = kDefaultRcond;
    std::size_t observation_count = 0;
    std::size_t history_size = 0;
    bool busy = false;
};

struct MeshSnapshot
{
    std::uint64_t mesh_version = 0;
    TriangleMesh mesh;
};

enum class PosteriorStatus { idle, completed, unchanged, running, cancelled, failed };

std::string_view to_string(PosteriorStatus status);

struct PosteriorOutcome
{
    PosteriorStatus status = PosteriorStatus::idle;
    std::uint64_t mesh_version = 0;
    Coefficients alpha;
    std::string message;
};

struct ObservationListing
{
    std::uint64_t mesh_version = 0;
    ObservationSet observations;
    double rcond = kDefaultRcond;
};

struct UndoOutcome
{
    bool undone = false;
    std::uint64_t mesh_version = 0;
};

/// FNV-1a over the little-endian int32 triangle indices, as 16 hex digits.
std::string triangulation_fingerprint(const Triangulation& triangles);

/// Owns the interactive sessions behind the HTTP service.
///
/// Each session holds its own model, current coefficients and mesh, the
/// observation set and a bounded undo history. Operations on one session are
/// serialized by a per-session mutex; mutating calls made while a background
/// posterior is running throw SessionError::busy. Every call refreshes the
/// session's idle timer and sweeps sessions idle for longer than the TTL.
class SessionManager
{
public:
    using Clock = std::chrono::steady_clock;

    explicit SessionManager(ServiceConfig config = {}, std::function<Clock::time_point()> clock = Clock::now);
    ~SessionManager();

    SessionManager(const SessionManager&) = delete;
    SessionManager& operator=(const SessionManager&) = delete;

    const ServiceConfig& config() const { return config_; }

    /// Throws SessionError::too_large above the byte cap and StatismoError for
    /// files that fail validation.
    SessionSummary create_session(std::string_view model_bytes,
                                  BasisConvention convention = BasisConvention::automatic);
    bool close_session(const std::string& id);
    std::size_t session_count() const;

    SessionSummary summary(const std::string& id);
    Triangulation triangles(const std::string& id);

    std::uint64_t set_coefficients(const std::string& id, const Coefficients& alpha);
    /// Only the listed components change. Indices must lie in [0, M).
    std::uint64_t set_coefficients(const std::string& id, const std::map<int, double>& sparse);
    Coefficients randomize(const std::string& id, std::uint64_t seed, std::uint64_t* mesh_version = nullptr);

    /// Pinned observations without a target are resolved against the current
    /// mesh. Throws DuplicateObservation when the vertex is already observed.
    Observation put_observation(const std::string& id, const ObservationSpec& spec);
    bool delete_observation(const std::string& id, int vertex_id);
    void clear_observations(const std::string& id);
    /// Replaces the whole set (and rcond when the document carries one).
    ObservationListing replace_observations(const std::string& id, const ObservationDocument& doc);
    ObservationListing list_observations(const std::string& id);
    void set_rcond(const std::string& id, double rcond);

    /// Synchronous for small models; otherwise starts a worker and reports
    /// PosteriorStatus::running. An empty observation set leaves everything
    /// untouched and reports PosteriorStatus::unchanged.
    PosteriorOutcome compute_posterior(const std::string& id);
    PosteriorOutcome posterior_status(const std::string& id);
    bool cancel_posterior(const std::string& id);

    MeshSnapshot mesh(const std::string& id);
    UndoOutcome undo(const std::string& id);
    std::optional<int> pick(const std::string& id, const Eigen::Vector3d& origin, const Eigen::Vector3d& direction);

    /// Drops sessions idle for longer than the TTL. Returns how many were removed.
    std::size_t evict_idle();

private:
    struct Job;
    struct Session;

    std::shared_ptr<Session> find(const std::string& id);
    std::unique_lock<std::mutex> lock_writable(Session& s);
    void settle(Session& s);
    void push_history(Session& s);
    void set_state(Session& s, Coefficients alpha);
    std::string new_id();

    ServiceConfig config_;
    std::function<Clock::time_point()> clock_;

    mutable std::mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::mt19937_64 id_rng_;

    struct Workers
    {
        std::mutex mutex;
        std::condition_variable done;
        std::size_t running = 0;
    };
    std::shared_ptr<Workers> workers_;
};

} // namespace ssm
