#include "ssm/session.hpp"

#include "ssm/errors.hpp"
#include "ssm/mesh_io.hpp"

#include <cstdio>
#include <thread>

namespace ssm {

std::string_view to_string(PosteriorStatus status)
{
    switch (status) {
    case PosteriorStatus::idle: return "idle";
    case PosteriorStatus::completed: return "completed";
    case PosteriorStatus::unchanged: return "unchanged";
    case PosteriorStatus::running: return "running";
    case PosteriorStatus::cancelled: return "cancelled";
    case PosteriorStatus::failed: return "failed";
    }
    return "idle";
}

std::string triangulation_fingerprint(const Triangulation& triangles)
{
    std::uint64_t hash = 14695981039346656037ull;
    for (const auto& tri : triangles) {
        for (const auto idx : tri) {
            const auto u = static_cast<std::uint32_t>(idx);
            for (int b = 0; b < 4; ++b) {
                hash ^= (u >> (8 * b)) & 0xffu;
                hash *= 1099511628211ull;
            }
        }
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
    return buf;
}

struct SessionManager::Job
{
    std::stop_source stop;
    std::mutex mutex;
    bool done = false;
    std::optional<PosteriorResult> result;
    std::string error;
    bool cancelled = false;
    // State at launch, pushed to the history when the result is applied.
    Coefficients alpha_before;
    ObservationSet observations_before;
};

struct SessionManager::Session
{
    struct HistoryEntry
    {
        Coefficients alpha;
        ObservationSet observations;
    };

    std::string id;
    std::shared_ptr<const ShapeModel> model;
    BasisConvention convention = BasisConvention::orthonormal;
    std::string fingerprint;

    std::mutex mutex;
    Coefficients alpha;
    TriangleMesh mesh;
    ObservationSet observations;
    double rcond = kDefaultRcond;
    std::deque<HistoryEntry> history;
    std::uint64_t mesh_version = 1;
    std::shared_ptr<Job> job;
    PosteriorOutcome last_posterior;
    Clock::time_point last_access;
};

SessionManager::SessionManager(ServiceConfig config, std::function<Clock::time_point()> clock)
    : config_(config), clock_(std::move(clock)), id_rng_(std::random_device{}()),
      workers_(std::make_shared<Workers>())
{
}

SessionManager::~SessionManager()
{
    {
        std::lock_guard lock(sessions_mutex_);
        for (auto& [id, s] : sessions_) {
            std::lock_guard slock(s->mutex);
            if (s->job) s->job->stop.request_stop();
        }
    }
    std::unique_lock lock(workers_->mutex);
    workers_->done.wait(lock, [this] { return workers_->running == 0; });
}

std::string SessionManager::new_id()
{
    char buf[33];
    std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(id_rng_()),
                  static_cast<unsigned long long>(id_rng_()));
    return buf;
}

SessionSummary SessionManager::create_session(std::string_view model_bytes, BasisConvention convention)
{
    if (model_bytes.size() > config_.max_model_bytes) {
        throw SessionError(SessionError::Kind::too_large, "model of " + std::to_string(model_bytes.size()) +
                                                              " bytes exceeds the limit of " +
                                                              std::to_string(config_.max_model_bytes));
    }
    LoadedModel loaded = load_statismo_detailed(model_bytes, convention);

    auto s = std::make_shared<Session>();
    s->model = std::make_shared<const ShapeModel>(std::move(loaded.model));
    s->convention = loaded.stored_convention;
    s->fingerprint = triangulation_fingerprint(s->model->triangles());
    s->alpha = Coefficients::zero(s->model->num_components());
    s->mesh = mean_shape(*s->model);
    s->rcond = config_.default_rcond;
    s->last_access = clock_();

    evict_idle();
    {
        std::lock_guard lock(sessions_mutex_);
        do {
            s->id = new_id();
        } while (sessions_.count(s->id) != 0);
        sessions_.emplace(s->id, s);
    }
    return summary(s->id);
}

bool SessionManager::close_session(const std::string& id)
{
    std::shared_ptr<Session> s;
    {
        std::lock_guard lock(sessions_mutex_);
        const auto it = sessions_.find(id);
        if (it == sessions_.end()) return false;
        s = it->second;
        sessions_.erase(it);
    }
    std::lock_guard slock(s->mutex);
    if (s->job) s->job->stop.request_stop();
    return true;
}

std::size_t SessionManager::session_count() const
{
    std::lock_guard lock(sessions_mutex_);
    return sessions_.size();
}

std::size_t SessionManager::evict_idle()
{
    const auto now = clock_();
    std::vector<std::shared_ptr<Session>> evicted;
    {
        std::lock_guard lock(sessions_mutex_);
        for (auto it = sessions_.begin(); it != sessions_.end();) {
            std::unique_lock slock(it->second->mutex, std::try_to_lock);
            // A session that is mid-operation or has a running worker is not idle.
            if (slock.owns_lock() && !it->second->job && now - it->second->last_access > config_.session_ttl) {
                slock.unlock();
                evicted.push_back(it->second);
                it = sessions_.erase(it);
            } else {
                ++it;
            }
        }
    }
    return evicted.size();
}

std::shared_ptr<SessionManager::Session> SessionManager::find(const std::string& id)
{
    evict_idle();
    std::lock_guard lock(sessions_mutex_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) {
        throw SessionError(SessionError::Kind::not_found, "unknown session '" + id + "'");
    }
    return it->second;
}

void SessionManager::settle(Session& s)
{
    s.last_access = clock_();
    if (!s.job) return;
    std::lock_guard jlock(s.job->mutex);
    if (!s.job->done) return;
    if (s.job->result) {
        s.history.push_back({s.job->alpha_before, s.job->observations_before});
        if (s.history.size() > config_.history_depth) s.history.pop_front();
        s.alpha = std::move(s.job->result->alpha);
        s.mesh = std::move(s.job->result->mesh);
        ++s.mesh_version;
        s.last_posterior = {PosteriorStatus::completed, s.mesh_version, s.alpha, {}};
    } else {
        s.last_posterior = {PosteriorStatus::failed, s.mesh_version, s.alpha, s.job->error};
    }
    s.job.reset();
}

std::unique_lock<std::mutex> SessionManager::lock_writable(Session& s)
{
    std::unique_lock lock(s.mutex);
    settle(s);
    if (s.job) {
        throw SessionError(SessionError::Kind::busy, "session '" + s.id + "' is computing a posterior");
    }
    return lock;
}

void SessionManager::push_history(Session& s)
{
    s.history.push_back({s.alpha, s.observations});
    if (s.history.size() > config_.history_depth) s.history.pop_front();
}

void SessionManager::set_state(Session& s, Coefficients alpha)
{
    s.mesh = instance(*s.model, alpha);
    s.alpha = std::move(alpha);
    ++s.mesh_version;
}

SessionSummary SessionManager::summary(const std::string& id)
{
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    settle(*s);
    SessionSummary out;
    out.id = s->id;
    out.num_vertices = s->model->num_vertices();
    out.num_components = s->model->num_components();
    out.variances = s->model->variances();
    out.stored_convention = s->convention;
    out.triangulation_fingerprint = s->fingerprint;
    out.mesh_version = s->mesh_version;
    out.alpha = s->alpha;
    out.rcond = s->rcond;
    out.observation_count = s->observations.size();
    out.history_size = s->history.size();
    out.busy = static_cast<bool>(s->job);
    return out;
}

Triangulation SessionManager::triangles(const std::string& id)
{
    return find(id)->model->triangles();
}

std::uint64_t SessionManager::set_coefficients(const std::string& id, const Coefficients& alpha)
{
    auto s = find(id);
    auto lock = lock_writable(*s);
    if (alpha.size() != s->model->num_components()) {
        throw DimensionError("expected " + std::to_string(s->model->num_components()) + " coefficients, got " +
                             std::to_string(alpha.size()));
    }
    TriangleMesh mesh = instance(*s->model, alpha);
    push_history(*s);
    s->alpha = alpha;
    s->mesh = std::move(mesh);
    ++s->mesh_version;
    return s->mesh_version;
}

std::uint64_t SessionManager::set_coefficients(const std::string& id, const std::map<int, double>& sparse)
{
    auto s = find(id);
    auto lock = lock_writable(*s);
    Coefficients alpha = s->alpha;
    for (const auto& [index, value] : sparse) {
        if (index < 0 || index >= alpha.size()) {
            throw std::out_of_range("coefficient index " + std::to_string(index) + " outside [0, " +
                                    std::to_string(alpha.size()) + ")");
        }
        alpha.values(index) = value;
    }
    TriangleMesh mesh = instance(*s->model, alpha);
    push_history(*s);
    s->alpha = std::move(alpha);
    s->mesh = std::move(mesh);
    ++s->mesh_version;
    return s->mesh_version;
}

Coefficients SessionManager::randomize(const std::string& id, std::uint64_t seed, std::uint64_t* mesh_version)
{
    auto s = find(id);
    auto lock = lock_writable(*s);
    Sample sample = sample_random(*s->model, seed);
    push_history(*s);
    s->alpha = sample.alpha;
    s->mesh = std::move(sample.mesh);
    ++s->mesh_version;
    if (mesh_version) *mesh_version = s->mesh_version;
    return sample.alpha;
}

Observation SessionManager::put_observation(const std::string& id, const ObservationSpec& spec)
{
    auto s = find(id);
    auto lock = lock_writable(*s);
    const Observation obs = resolve_observation(spec, s->mesh);
    if (s->observations.contains(obs.vertex_id)) {
        throw DuplicateObservation(obs.vertex_id);
    }
    push_history(*s);
    s->observations.insert(obs);
    return obs;
}

bool SessionManager::delete_observation(const std::string& id, int vertex_id)
{
    auto s = find(id);
    auto lock = lock_writable(*s);
    if (!s->observations.contains(vertex_id)) return false;
    push_history(*s);
    s->observations.erase(vertex_id);
    return true;
}

void SessionManager::clear_observations(const std::string& id)
{
    auto s = find(id);
    auto lock = lock_writable(*s);
    if (s->observations.empty()) return;
    push_history(*s);
    s->observations.clear();
}

ObservationListing SessionManager::replace_observations(const std::string& id, const ObservationDocument& doc)
{
    auto s = find(id);
    auto lock = lock_writable(*s);
    ObservationSet set = resolve_observations(doc, s->mesh);
    push_history(*s);
    s->observations = std::move(set);
    if (doc.rcond) s->rcond = *doc.rcond;
    return {s->mesh_version, s->observations, s->rcond};
}

ObservationListing SessionManager::list_observations(const std::string& id)
{
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    settle(*s);
    return {s->mesh_version, s->observations, s->rcond};
}

void SessionManager::set_rcond(const std::string& id, double rcond)
{
    if (!(rcond > 0.0 && rcond < 1.0)) {
        throw std::invalid_argument("rcond must lie in (0, 1)");
    }
    auto s = find(id);
    auto lock = lock_writable(*s);
    s->rcond = rcond;
}

PosteriorOutcome SessionManager::compute_posterior(const std::string& id)
{
    auto s = find(id);
    auto lock = lock_writable(*s);
    if (s->observations.empty()) {
        s->last_posterior = {PosteriorStatus::unchanged, s->mesh_version, s->alpha,
                             "no observations; shape left unchanged"};
        return s->last_posterior;
    }
    // Validate ids up front so errors surface on the request, not the worker.
    for (const auto& [vid, obs] : s->observations) {
        if (vid >= s->model->num_vertices()) {
            throw std::out_of_range("vertex id " + std::to_string(vid) + " outside the model");
        }
    }

    const double cost = 3.0 * static_cast<double>(s->model->num_vertices()) *
                        static_cast<double>(s->model->num_components());
    if (cost <= config_.async_threshold) {
        PosteriorResult r = posterior_mean(*s->model, s->observations, s->rcond, s->mesh, s->alpha);
        push_history(*s);
        s->alpha = std::move(r.alpha);
        s->mesh = std::move(r.mesh);
        ++s->mesh_version;
        s->last_posterior = {PosteriorStatus::completed, s->mesh_version, s->alpha, {}};
        return s->last_posterior;
    }

    auto job = std::make_shared<Job>();
    job->alpha_before = s->alpha;
    job->observations_before = s->observations;
    s->job = job;
    s->last_posterior = {PosteriorStatus::running, s->mesh_version, s->alpha, {}};

    {
        std::lock_guard wlock(workers_->mutex);
        ++workers_->running;
    }
    std::thread([job, workers = workers_, model = s->model, obs = s->observations, rcond = s->rcond,
                 mesh = s->mesh, alpha = s->alpha] {
        std::optional<PosteriorResult> result;
        std::string error;
        try {
            result = posterior_mean(*model, obs, rcond, mesh, alpha, job->stop.get_token());
        } catch (const std::exception& e) {
            error = e.what();
        }
        {
            std::lock_guard jlock(job->mutex);
            job->result = std::move(result);
            job->error = std::move(error);
            job->done = true;
        }
        std::lock_guard wlock(workers->mutex);
        --workers->running;
        workers->done.notify_all();
    }).detach();
    return s->last_posterior;
}

PosteriorOutcome SessionManager::posterior_status(const std::string& id)
{
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    settle(*s);
    return s->last_posterior;
}

bool SessionManager::cancel_posterior(const std::string& id)
{
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    settle(*s);
    if (!s->job) return false;
    s->job->stop.request_stop();
    s->job.reset();
    s->last_posterior = {PosteriorStatus::cancelled, s->mesh_version, s->alpha, "posterior computation cancelled"};
    return true;
}

MeshSnapshot SessionManager::mesh(const std::string& id)
{
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    settle(*s);
    return {s->mesh_version, s->mesh};
}

UndoOutcome SessionManager::undo(const std::string& id)
{
    auto s = find(id);
    auto lock = lock_writable(*s);
    if (s->history.empty()) {
        return {false, s->mesh_version};
    }
    auto entry = std::move(s->history.back());
    s->history.pop_back();
    s->observations = std::move(entry.observations);
    set_state(*s, std::move(entry.alpha));
    return {true, s->mesh_version};
}

std::optional<int> SessionManager::pick(const std::string& id, const Eigen::Vector3d& origin,
                                        const Eigen::Vector3d& direction)
{
    auto s = find(id);
    std::lock_guard lock(s->mutex);
    settle(*s);
    return pick_vertex(s->mesh, origin, direction);
}

} // namespace ssm
