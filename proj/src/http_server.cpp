#include <httplib.h>

#include "tokweight/error.hpp"
#include "tokweight/service.hpp"

namespace tokweight {

struct HttpServer::Impl {
    Service& service;
    httplib::Server server;
    explicit Impl(Service& s) : service(s) {}
};

namespace {

void reply(httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
}

nlohmann::json parse_body(const httplib::Request& req) { return nlohmann::json::parse(req.body); }

}  // namespace

HttpServer::HttpServer(Service& service, std::string static_dir) : impl_(std::make_unique<Impl>(service)) {
    auto& srv = impl_->server;
    Service& svc = impl_->service;
    srv.Get("/stores", [&svc](const httplib::Request&, httplib::Response& res) { reply(res, svc.list_stores()); });
    srv.Post("/sessions", [&svc](const httplib::Request& req, httplib::Response& res) {
        try {
            reply(res, svc.create_session(parse_body(req)));
        } catch (const std::exception& e) {
            reply(res, error_response(e));
        }
    });
    srv.Get(R"(/sessions/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
        reply(res, svc.get_session(req.matches[1]));
    });
    srv.Post(R"(/sessions/([^/]+)/weights)", [&svc](const httplib::Request& req, httplib::Response& res) {
        try {
            reply(res, svc.update_weights(req.matches[1], parse_body(req)));
        } catch (const std::exception& e) {
            reply(res, error_response(e));
        }
    });
    if (!static_dir.empty() && !srv.set_mount_point("/", static_dir)) {
        throw Error(ErrorKind::IO, "cannot serve static files from " + static_dir);
    }
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    auto& srv = impl_->server;
    const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorKind::IO, "cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
    if (impl_) impl_->server.stop();
}

}  // namespace tokweight
