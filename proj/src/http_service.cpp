#include "ssm/http_service.hpp"

#include "ssm/errors.hpp"
#include "ssm/mesh_io.hpp"

#include "httplib.h"
#include "json.hpp"

#include <random>

namespace ssm {

namespace {

using nlohmann::json;

void send_json(httplib::Response& res, int status, const json& body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view code, const std::string& message,
                const json& extra = json::object())
{
    json body{{"error", code}, {"message", message}};
    for (const auto& [k, v] : extra.items()) body[k] = v;
    send_json(res, status, body);
}

json report_to_json(const ValidationReport& report)
{
    json out = json::array();
    for (const auto& v : report) {
        out.push_back({{"code", v.code}, {"path", v.path}, {"message", v.message}});
    }
    return out;
}

json vector_to_json(const Vector& v)
{
    return json(std::vector<double>(v.data(), v.data() + v.size()));
}

json triangles_to_json(const Triangulation& triangles)
{
    json out = json::array();
    for (const auto& t : triangles) out.push_back({t[0], t[1], t[2]});
    return out;
}

json summary_to_json(const SessionSummary& s)
{
    return json{{"session_id", s.id},
                {"n_vertices", s.num_vertices},
                {"n_components", s.num_components},
                {"variances", vector_to_json(s.variances)},
                {"basis_convention", std::string(to_string(s.stored_convention))},
                {"triangulation_fingerprint", s.triangulation_fingerprint},
                {"mesh_version", s.mesh_version},
                {"alpha", vector_to_json(s.alpha.values)},
                {"rcond", s.rcond},
                {"observation_count", s.observation_count},
                {"history_size", s.history_size},
                {"busy", s.busy}};
}

json outcome_to_json(const PosteriorOutcome& o)
{
    json out{{"status", std::string(to_string(o.status))},
             {"mesh_version", o.mesh_version},
             {"alpha", vector_to_json(o.alpha.values)}};
    if (!o.message.empty()) out["message"] = o.message;
    return out;
}

Eigen::Vector3d vec3_from_json(const json& j, const char* name)
{
    const auto it = j.find(name);
    if (it == j.end() || !it->is_array() || it->size() != 3) {
        throw std::invalid_argument(std::string("\"") + name + "\" must be an array of 3 numbers");
    }
    Eigen::Vector3d v;
    for (int c = 0; c < 3; ++c) {
        const auto& x = (*it)[static_cast<std::size_t>(c)];
        if (!x.is_number()) throw std::invalid_argument(std::string("\"") + name + "\" must contain numbers");
        v(c) = x.get<double>();
    }
    return v;
}

json parse_body(const httplib::Request& req)
{
    if (req.body.empty()) return json::object();
    try {
        return json::parse(req.body);
    } catch (const json::parse_error& e) {
        throw ObservationFormatError(std::string("request body is not valid JSON: ") + e.what());
    }
}

std::optional<BasisConvention> parse_convention(std::string_view text)
{
    if (text.empty() || text == "auto") return BasisConvention::automatic;
    if (text == "orthonormal") return BasisConvention::orthonormal;
    if (text == "prescaled") return BasisConvention::prescaled;
    return std::nullopt;
}

/// Runs a handler and maps library exceptions onto HTTP status codes.
template <typename F>
httplib::Server::Handler guarded(F&& fn)
{
    return [fn = std::forward<F>(fn)](const httplib::Request& req, httplib::Response& res) {
        try {
            fn(req, res);
        } catch (const SessionError& e) {
            switch (e.kind()) {
            case SessionError::Kind::not_found: send_error(res, 404, "not_found", e.what()); break;
            case SessionError::Kind::busy: send_error(res, 409, "busy", e.what()); break;
            case SessionError::Kind::too_large: send_error(res, 413, "too_large", e.what()); break;
            }
        } catch (const StatismoError& e) {
            send_error(res, 422, "invalid_model", "model file failed validation",
                       json{{"violations", report_to_json(e.report())}});
        } catch (const DuplicateObservation& e) {
            send_error(res, 409, "duplicate_observation", e.what(), json{{"vertex_id", e.vertex_id()}});
        } catch (const std::out_of_range& e) {
            send_error(res, 400, "out_of_range", e.what());
        } catch (const NumericalError& e) {
            send_error(res, 500, "numerical_error", e.what());
        } catch (const std::invalid_argument& e) {
            send_error(res, 400, "bad_request", e.what());
        } catch (const json::exception& e) {
            send_error(res, 400, "bad_request", e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, "internal", e.what());
        }
    };
}

int vertex_param(const httplib::Request& req, std::size_t index)
{
    const std::string& text = req.matches[static_cast<int>(index)].str();
    try {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used != text.size() || v < 0 || v > std::numeric_limits<int>::max()) throw std::out_of_range(text);
        return static_cast<int>(v);
    } catch (const std::logic_error&) {
        throw std::out_of_range("vertex id '" + text + "' is out of range");
    }
}

} // namespace

struct HttpService::Impl
{
    SessionManager& sessions;
    httplib::Server server;
    std::mt19937_64 seed_source{std::random_device{}()};
    std::mutex seed_mutex;

    explicit Impl(SessionManager& s) : sessions(s) { routes(); }

    void routes();
};

void HttpService::Impl::routes()
{
    server.set_payload_max_length(sessions.config().max_model_bytes + (std::size_t{1} << 20));
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                {"Access-Control-Allow-Methods", "GET, POST, PUT, DELETE, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"},
                                {"Access-Control-Expose-Headers", "X-Mesh-Version"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    static const std::string kId = R"(/sessions/([0-9a-f]+))";
    auto& S = sessions;

    server.Get("/health", guarded([&S](const httplib::Request&, httplib::Response& res) {
                   send_json(res, 200, {{"status", "ok"}, {"sessions", S.session_count()}});
               }));

    server.Post("/sessions", guarded([&S](const httplib::Request& req, httplib::Response& res) {
                    std::string bytes;
                    if (req.is_multipart_form_data()) {
                        if (req.has_file("model")) {
                            bytes = req.get_file_value("model").content;
                        } else if (!req.files.empty()) {
                            bytes = req.files.begin()->second.content;
                        } else {
                            throw std::invalid_argument("multipart upload lacks a \"model\" part");
                        }
                    } else {
                        bytes = req.body;
                    }
                    const auto convention = parse_convention(req.get_param_value("basis"));
                    if (!convention) throw std::invalid_argument("basis must be auto, orthonormal or prescaled");
                    const SessionSummary summary = S.create_session(bytes, *convention);
                    json body = summary_to_json(summary);
                    body["triangles"] = triangles_to_json(S.triangles(summary.id));
                    send_json(res, 201, body);
                }));

    server.Get(kId, guarded([&S](const httplib::Request& req, httplib::Response& res) {
                   const std::string id = req.matches[1];
                   json body = summary_to_json(S.summary(id));
                   if (req.get_param_value("triangles") == "1") body["triangles"] = triangles_to_json(S.triangles(id));
                   send_json(res, 200, body);
               }));

    server.Delete(kId, guarded([&S](const httplib::Request& req, httplib::Response& res) {
                      if (!S.close_session(req.matches[1])) {
                          throw SessionError(SessionError::Kind::not_found, "unknown session");
                      }
                      res.status = 204;
                  }));

    server.Put(kId + "/coefficients", guarded([&S](const httplib::Request& req, httplib::Response& res) {
                   const std::string id = req.matches[1];
                   const json body = parse_body(req);
                   std::uint64_t version = 0;
                   if (const auto dense = body.find("alpha"); dense != body.end()) {
                       const auto values = dense->get<std::vector<double>>();
                       version = S.set_coefficients(id, Coefficients(Eigen::Map<const Vector>(
                                                            values.data(), static_cast<Eigen::Index>(values.size()))));
                   } else if (const auto sparse = body.find("values"); sparse != body.end() && sparse->is_object()) {
                       std::map<int, double> updates;
                       for (const auto& [key, value] : sparse->items()) {
                           std::size_t used = 0;
                           const int index = std::stoi(key, &used);
                           if (used != key.size()) throw std::invalid_argument("bad coefficient index '" + key + "'");
                           updates[index] = value.get<double>();
                       }
                       version = S.set_coefficients(id, updates);
                   } else {
                       throw std::invalid_argument("body needs \"alpha\" (array) or \"values\" (object)");
                   }
                   const auto summary = S.summary(id);
                   send_json(res, 200, {{"mesh_version", version}, {"alpha", vector_to_json(summary.alpha.values)}});
               }));

    server.Post(kId + "/randomize", guarded([this, &S](const httplib::Request& req, httplib::Response& res) {
                    const json body = parse_body(req);
                    std::uint64_t seed = 0;
                    if (const auto it = body.find("seed"); it != body.end() && !it->is_null()) {
                        seed = it->get<std::uint64_t>();
                    } else {
                        std::lock_guard lock(seed_mutex);
                        seed = seed_source();
                    }
                    std::uint64_t version = 0;
                    const Coefficients alpha = S.randomize(req.matches[1], seed, &version);
                    send_json(res, 200, {{"seed", seed}, {"mesh_version", version}, {"alpha", vector_to_json(alpha.values)}});
                }));

    server.Get(kId + "/observations", guarded([&S](const httplib::Request& req, httplib::Response& res) {
                   const auto listing = S.list_observations(req.matches[1]);
                   json body = observations_to_json(listing.observations, listing.rcond);
                   body["mesh_version"] = listing.mesh_version;
                   send_json(res, 200, body);
               }));

    server.Put(kId + "/observations", guarded([&S](const httplib::Request& req, httplib::Response& res) {
                   const auto doc = observation_document_from_json(parse_body(req));
                   const auto listing = S.replace_observations(req.matches[1], doc);
                   json body = observations_to_json(listing.observations, listing.rcond);
                   body["mesh_version"] = listing.mesh_version;
                   send_json(res, 200, body);
               }));

    server.Delete(kId + "/observations", guarded([&S](const httplib::Request& req, httplib::Response& res) {
                      S.clear_observations(req.matches[1]);
                      send_json(res, 200, {{"mesh_version", S.summary(req.matches[1]).mesh_version}});
                  }));

    const std::string single = kId + R"(/observations/(\d+))";

    server.Get(single, guarded([&S](const httplib::Request& req, httplib::Response& res) {
                   const int vid = vertex_param(req, 2);
                   const auto listing = S.list_observations(req.matches[1]);
                   const Observation* obs = listing.observations.find(vid);
                   if (!obs) {
                       send_error(res, 404, "not_found", "vertex " + std::to_string(vid) + " is not observed");
                       return;
                   }
                   json body = observation_to_json(*obs);
                   body["mesh_version"] = listing.mesh_version;
                   send_json(res, 200, body);
               }));

    server.Put(single, guarded([&S](const httplib::Request& req, httplib::Response& res) {
                   const int vid = vertex_param(req, 2);
                   json body = parse_body(req);
                   if (const auto it = body.find("vertex_id"); it != body.end() && *it != vid) {
                       throw std::invalid_argument("vertex_id in body does not match the URL");
                   }
                   body["vertex_id"] = vid;
                   if (!body.contains("kind")) body["kind"] = body.contains("target") ? "moved" : "pinned";
                   const Observation obs = S.put_observation(req.matches[1], observation_spec_from_json(body));
                   json out = observation_to_json(obs);
                   out["mesh_version"] = S.summary(req.matches[1]).mesh_version;
                   send_json(res, 201, out);
               }));

    server.Delete(single, guarded([&S](const httplib::Request& req, httplib::Response& res) {
                      const int vid = vertex_param(req, 2);
                      if (!S.delete_observation(req.matches[1], vid)) {
                          send_error(res, 404, "not_found", "vertex " + std::to_string(vid) + " is not observed");
                          return;
                      }
                      send_json(res, 200, {{"mesh_version", S.summary(req.matches[1]).mesh_version}});
                  }));

    server.Post(kId + "/posterior", guarded([&S](const httplib::Request& req, httplib::Response& res) {
                    const auto outcome = S.compute_posterior(req.matches[1]);
                    send_json(res, outcome.status == PosteriorStatus::running ? 202 : 200, outcome_to_json(outcome));
                }));

    server.Get(kId + "/posterior", guarded([&S](const httplib::Request& req, httplib::Response& res) {
                   send_json(res, 200, outcome_to_json(S.posterior_status(req.matches[1])));
               }));

    server.Delete(kId + "/posterior", guarded([&S](const httplib::Request& req, httplib::Response& res) {
                      const bool cancelled = S.cancel_posterior(req.matches[1]);
                      json body = outcome_to_json(S.posterior_status(req.matches[1]));
                      body["cancelled"] = cancelled;
                      send_json(res, 200, body);
                  }));

    server.Get(kId + "/mesh", guarded([&S](const httplib::Request& req, httplib::Response& res) {
                   const std::string id = req.matches[1];
                   const std::string format = req.has_param("format") ? req.get_param_value("format") : "json";
                   const MeshSnapshot snap = S.mesh(id);
                   res.set_header("X-Mesh-Version", std::to_string(snap.mesh_version));
                   if (format == "json") {
                       send_json(res, 200,
                                 {{"mesh_version", snap.mesh_version},
                                  {"triangulation_fingerprint", triangulation_fingerprint(snap.mesh.triangles)},
                                  {"positions", vector_to_json(snap.mesh.positions)}});
                   } else if (format == "ply_ascii" || format == "ply_binary") {
                       const auto ply = export_ply(snap.mesh, format == "ply_ascii" ? PlyFormat::ascii
                                                                                     : PlyFormat::binary_little_endian);
                       res.set_header("Content-Disposition", "attachment; filename=\"shape.ply\"");
                       res.status = 200;
                       res.set_content(ply, "application/octet-stream");
                   } else {
                       throw std::invalid_argument("format must be json, ply_ascii or ply_binary");
                   }
               }));

    server.Post(kId + "/undo", guarded([&S](const httplib::Request& req, httplib::Response& res) {
                    const auto outcome = S.undo(req.matches[1]);
                    send_json(res, 200, {{"undone", outcome.undone}, {"mesh_version", outcome.mesh_version}});
                }));

    server.Post(kId + "/pick", guarded([&S](const httplib::Request& req, httplib::Response& res) {
                    const json body = parse_body(req);
                    const auto hit = S.pick(req.matches[1], vec3_from_json(body, "origin"),
                                            vec3_from_json(body, "direction"));
                    send_json(res, 200, {{"vertex_id", hit ? json(*hit) : json(nullptr)},
                                         {"mesh_version", S.summary(req.matches[1]).mesh_version}});
                }));
}

HttpService::HttpService(SessionManager& sessions) : impl_(std::make_unique<Impl>(sessions)) {}

HttpService::~HttpService()
{
    stop();
}

bool HttpService::mount_static(const std::string& directory)
{
    return impl_->server.set_mount_point("/", directory);
}

int HttpService::bind_any_port(const std::string& host)
{
    return impl_->server.bind_to_any_port(host);
}

bool HttpService::bind(const std::string& host, int port)
{
    return impl_->server.bind_to_port(host, port);
}

bool HttpService::run()
{
    return impl_->server.listen_after_bind();
}

void HttpService::stop()
{
    if (impl_->server.is_running()) impl_->server.stop();
}

void HttpService::wait_until_ready() const
{
    impl_->server.wait_until_ready();
}

} // namespace ssm
