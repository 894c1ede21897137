#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <json.hpp>

#include "tokweight/retrieval.hpp"

namespace tokweight {

struct ServiceResponse {
    int status = 200;
    nlohmann::json body;
};

struct ServiceOptions {
    std::size_t top_k = 100;
    QueryOptions query;
};

struct Session {
    std::string id;
    std::string prompt;
    std::string store_id;
    TokenSequence seq;
    TokenWeights weights;
    std::uint64_t revision = 0;
    std::uint64_t ranking_digest = 0;
    std::mutex mutex;  // one encode at a time per session
};

// Sessions over a shared read-only model and set of stores. Every handler
// returns a status code and a JSON body; the HTTP layer only routes.
class Service {
public:
    Service(const EncoderModel& model, const EncoderConfig& cfg, const Vocabulary& vocab, ServiceOptions opts = {});

    void add_store(const std::string& id, EvalSet eval);

    ServiceResponse list_stores() const;
    // body: {"prompt": str, "store_id": str}
    ServiceResponse create_session(const nlohmann::json& body);
    // body: {"weights": {"<content index>": w, ...}, "revision": optional base revision, "top_k": optional}
    ServiceResponse update_weights(const std::string& session_id, const nlohmann::json& body);
    ServiceResponse get_session(const std::string& session_id) const;

    // The shared query path, exposed so callers can compare against the CLI.
    QueryResult query(const std::string& store_id, const TokenSequence& seq, const TokenWeights& w) const;

private:
    std::shared_ptr<Session> find_session(const std::string& id) const;
    const EvalSet& find_store(const std::string& id) const;
    nlohmann::json ranking_json(const QueryResult& r, const EvalSet& eval, std::size_t top_k) const;

    const EncoderModel& model_;
    EncoderConfig cfg_;
    const Vocabulary& vocab_;
    ServiceOptions opts_;
    std::map<std::string, EvalSet> stores_;
    mutable std::mutex mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t next_session_ = 1;
};

// Error body and status for an exception raised while handling a request.
ServiceResponse error_response(const std::exception& e);

// Blocks serving the JSON API on host:port until stop_server is called from
// another thread. static_dir, when non-empty, is mounted at "/".
class HttpServer {
public:
    explicit HttpServer(Service& service, std::string static_dir = "");
    ~HttpServer();
    HttpServer(const HttpServer&) = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // Binds and returns the bound port (port 0 picks a free one).
    int bind(const std::string& host, int port);
    void listen();  // after bind
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace tokweight
