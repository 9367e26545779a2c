#pragma once

#include "ssm/session.hpp"

#include <memory>
#include <string>

namespace ssm {

/// HTTP + JSON front end of a SessionManager.
///
///   GET    /health
///   POST   /sessions                          model upload (multipart field "model" or raw body)
///   GET    /sessions/{id}                     summary; ?triangles=1 adds the triangulation
///   DELETE /sessions/{id}
///   PUT    /sessions/{id}/coefficients        {"alpha":[..]} or {"values":{"i":v,..}}
///   POST   /sessions/{id}/randomize           {"seed":n}
///   GET|PUT|DELETE /sessions/{id}/observations[/{vertex_id}]
///   POST|GET|DELETE /sessions/{id}/posterior  compute, poll, cancel
///   GET    /sessions/{id}/mesh?format=json|ply_ascii|ply_binary
///   POST   /sessions/{id}/undo
///   POST   /sessions/{id}/pick                {"origin":[..],"direction":[..]}
class HttpService
{
public:
    explicit HttpService(SessionManager& sessions);
    ~HttpService();

    HttpService(const HttpService&) = delete;
    HttpService& operator=(const HttpService&) = delete;

    /// Serves files from `directory` for requests outside the API.
    bool mount_static(const std::string& directory);

    /// Binds an ephemeral port and returns it, or -1.
    int bind_any_port(const std::string& host = "127.0.0.1");
    bool bind(const std::string& host, int port);
    /// Blocks until stop() is called.
    bool run();
    void stop();
    void wait_until_ready() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace ssm
