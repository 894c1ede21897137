#include "tokweight/service.hpp"

#include <cmath>

#include "tokweight/error.hpp"

namespace tokweight {

namespace {

std::uint64_t digest_rows(const RankedRetrieval& r, std::size_t top_k) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < std::min(top_k, r.rows.size()); ++i) {
        h ^= static_cast<std::uint64_t>(r.rows[i]);
        h *= 1099511628211ull;
    }
    return h;
}

nlohmann::json error_body(const std::string& kind, const std::string& message) {
    return {{"error", kind}, {"message", message}};
}

}  // namespace

ServiceResponse error_response(const std::exception& e) {
    if (const auto* err = dynamic_cast<const Error*>(&e)) {
        int status = 500;
        if (err->kind() == ErrorKind::NotFound) status = 404;
        else if (err->kind() == ErrorKind::Conflict) status = 409;
        else if (err->is_validation()) status = 400;
        return {status, error_body(error_kind_name(err->kind()), err->what())};
    }
    if (dynamic_cast<const nlohmann::json::exception*>(&e)) return {400, error_body("Parse", e.what())};
    return {500, error_body("Internal", e.what())};
}

Service::Service(const EncoderModel& model, const EncoderConfig& cfg, const Vocabulary& vocab, ServiceOptions opts)
    : model_(model), cfg_(cfg), vocab_(vocab), opts_(opts) {
    cfg_.validate();
    if (opts_.top_k == 0) throw Error(ErrorKind::InvalidArgument, "top_k must be positive");
}

void Service::add_store(const std::string& id, EvalSet eval) {
    if (eval.store.dim() != model_.text_projection.cols) {
        throw Error(ErrorKind::DimensionMismatch, "store " + id + " has dimension " + std::to_string(eval.store.dim()) +
                                                      ", model produces " +
                                                      std::to_string(model_.text_projection.cols));
    }
    std::lock_guard lock(mutex_);
    if (stores_.count(id)) throw Error(ErrorKind::Conflict, "store " + id + " already loaded");
    stores_.emplace(id, std::move(eval));
}

const EvalSet& Service::find_store(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = stores_.find(id);
    if (it == stores_.end()) throw Error(ErrorKind::NotFound, "unknown store " + id);
    return it->second;  // stores are never removed
}

std::shared_ptr<Session> Service::find_session(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) throw Error(ErrorKind::NotFound, "unknown session " + id);
    return it->second;
}

QueryResult Service::query(const std::string& store_id, const TokenSequence& seq, const TokenWeights& w) const {
    return run_query(seq, w, model_, cfg_, vocab_, find_store(store_id), opts_.query);
}

nlohmann::json Service::ranking_json(const QueryResult& r, const EvalSet& eval, std::size_t top_k) const {
    nlohmann::json items = nlohmann::json::array();
    for (std::size_t i = 0; i < std::min(top_k, r.ranking.size()); ++i) {
        const auto row = r.ranking.rows[i];
        items.push_back({{"rank", i + 1},
                         {"item_id", eval.store.item_ids[row]},
                         {"score", r.ranking.scores[i]},
                         {"thumbnail", eval.store.thumbnails[row]}});
    }
    nlohmann::json auc = nlohmann::json::array();
    for (const auto& c : r.curves) {
        auc.push_back({{"category", c.category}, {"label", c.label}, {"count", c.count}, {"auc", c.auc}});
    }
    return {{"ranking", items}, {"auc", auc}, {"tie_policy", r.ranking.tie_policy}};
}

ServiceResponse Service::list_stores() const {
    std::lock_guard lock(mutex_);
    nlohmann::json out = nlohmann::json::array();
    for (const auto& [id, eval] : stores_) {
        out.push_back({{"store_id", id}, {"items", eval.store.size()}, {"dim", eval.store.dim()}, {"categories", eval.labels}});
    }
    return {200, {{"stores", out}}};
}

ServiceResponse Service::create_session(const nlohmann::json& body) {
    try {
        const auto prompt = body.at("prompt").get<std::string>();
        const auto store_id = body.at("store_id").get<std::string>();
        const auto& eval = find_store(store_id);
        auto s = std::make_shared<Session>();
        s->prompt = prompt;
        s->store_id = store_id;
        s->seq = tokenize(prompt, vocab_);
        s->weights = TokenWeights::ones(s->seq.size());
        const auto r = run_query(s->seq, s->weights, model_, cfg_, vocab_, eval, opts_.query);
        s->ranking_digest = digest_rows(r.ranking, opts_.top_k);
        {
            std::lock_guard lock(mutex_);
            s->id = "s" + std::to_string(next_session_++);
            sessions_.emplace(s->id, s);
        }
        nlohmann::json tokens = nlohmann::json::array();
        for (std::size_t i = 0; i < s->seq.n; ++i) {
            tokens.push_back({{"index", i},
                              {"text", token_text(s->seq.ids[i + 1], vocab_)},
                              {"char_span", {s->seq.char_spans[i].first, s->seq.char_spans[i].second}}});
        }
        auto out = ranking_json(r, eval, opts_.top_k);
        out["session_id"] = s->id;
        out["tokens"] = tokens;
        out["default_weights"] = std::vector<double>(s->seq.n, 1.0);
        out["revision"] = s->revision;
        return {201, out};
    } catch (const std::exception& e) {
        return error_response(e);
    }
}

ServiceResponse Service::update_weights(const std::string& session_id, const nlohmann::json& body) {
    try {
        auto s = find_session(session_id);
        const auto& eval = find_store(s->store_id);
        std::lock_guard lock(s->mutex);
        if (body.contains("revision") && body.at("revision").get<std::uint64_t>() != s->revision) {
            throw Error(ErrorKind::Conflict, "revision " + body.at("revision").dump() + " is stale; current is " +
                                                 std::to_string(s->revision));
        }
        std::size_t top_k = opts_.top_k;
        if (body.contains("top_k")) {
            top_k = body.at("top_k").get<std::size_t>();
            if (top_k == 0) throw Error(ErrorKind::InvalidArgument, "top_k must be positive");
        }
        TokenWeights w = s->weights;
        for (const auto& [key, value] : body.at("weights").items()) {
            std::size_t pos = 0;
            std::size_t index = 0;
            try {
                index = std::stoul(key, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos != key.size() || key.empty()) throw Error(ErrorKind::InvalidArgument, "bad token index " + key);
            if (index >= s->seq.n) throw Error(ErrorKind::InvalidArgument, "token index " + key + " out of range");
            const double v = value.get<double>();
            if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "weights must be finite and >= 0");
            w.values[index + 1] = v;
        }
        const auto r = run_query(s->seq, w, model_, cfg_, vocab_, eval, opts_.query);
        s->weights = std::move(w);
        s->ranking_digest = digest_rows(r.ranking, top_k);
        ++s->revision;
        auto out = ranking_json(r, eval, top_k);
        out["session_id"] = s->id;
        out["revision"] = s->revision;
        out["weights"] = std::vector<double>(s->weights.values.begin() + 1, s->weights.values.end() - 1);
        return {200, out};
    } catch (const std::exception& e) {
        return error_response(e);
    }
}

ServiceResponse Service::get_session(const std::string& session_id) const {
    try {
        auto s = find_session(session_id);
        std::lock_guard lock(s->mutex);
        nlohmann::json tokens = nlohmann::json::array();
        for (std::size_t i = 0; i < s->seq.n; ++i) {
            tokens.push_back({{"index", i}, {"text", token_text(s->seq.ids[i + 1], vocab_)}});
        }
        return {200,
                {{"session_id", s->id},
                 {"prompt", s->prompt},
                 {"store_id", s->store_id},
                 {"tokens", tokens},
                 {"weights", std::vector<double>(s->weights.values.begin() + 1, s->weights.values.end() - 1)},
                 {"revision", s->revision},
                 {"ranking_digest", s->ranking_digest}}};
    } catch (const std::exception& e) {
        return error_response(e);
    }
}

}  // namespace tokweight
