#pragma once

#include "ssm/http_service.hpp"

#include "httplib.h"

#include <stdexcept>
#include <thread>

namespace ssm::testing {

/// In-process service on an ephemeral loopback port with a matching client.
class RunningService
{
public:
    explicit RunningService(ServiceConfig config = {}) : sessions_(config), service_(sessions_)
    {
        port_ = service_.bind_any_port("127.0.0.1");
        if (port_ <= 0) throw std::runtime_error("could not bind a port");
        thread_ = std::thread([this] { service_.run(); });
        service_.wait_until_ready();
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
        client_->set_read_timeout(120, 0);
    }
    ~RunningService()
    {
        service_.stop();
        if (thread_.joinable()) thread_.join();
    }
    RunningService(const RunningService&) = delete;
    RunningService& operator=(const RunningService&) = delete;

    httplib::Client& client() { return *client_; }
    SessionManager& sessions() { return sessions_; }
    int port() const { return port_; }

private:
    SessionManager sessions_;
    HttpService service_;
    int port_ = -1;
    std::thread thread_;
    std::unique_ptr<httplib::Client> client_;
};

} // namespace ssm::testing
