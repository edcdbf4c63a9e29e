#include "streamgate/remote_backend.hpp"

#include <httplib.h>
#include <json.hpp>

#include "streamgate/error.hpp"

namespace streamgate {

using nlohmann::json;

namespace {

json token_strings(const Vocab &vocab, std::span<const int> ids) {
    json out = json::array();
    for (int id : ids) out.push_back(vocab.token(id));
    return out;
}

std::vector<int> token_ids(const Vocab &vocab, const json &tokens) {
    std::vector<int> ids;
    for (const auto &t : tokens) ids.push_back(vocab.id(t.get<std::string>()));
    return ids;
}

json context_json(const Vocab &vocab, const CognitionContext &ctx) {
    json turns = json::array();
    for (const auto &t : ctx.prior_turns) turns.push_back(token_strings(vocab, t));
    return json{{"prompt", token_strings(vocab, ctx.prompt_tokens)},
                {"pooled", ctx.pooled_tokens},
                {"prior_turns", turns},
                {"turns_kept", ctx.turns_kept}};
}

CognitionContext context_from(const Vocab &vocab, const json &j) {
    CognitionContext ctx;
    ctx.prompt_tokens = token_ids(vocab, j.at("prompt"));
    ctx.pooled_tokens = j.at("pooled").get<std::vector<std::vector<double>>>();
    for (const auto &t : j.at("prior_turns")) ctx.prior_turns.push_back(token_ids(vocab, t));
    ctx.turns_kept = j.value("turns_kept", kDefaultTurnsKept);
    return ctx;
}

} // namespace

RemoteBackend::RemoteBackend(const std::string &host, int port, const Vocab &vocab, double timeout_s)
    : client_(std::make_unique<httplib::Client>(host, port)), vocab_(vocab) {
    const auto sec = static_cast<time_t>(timeout_s);
    const auto usec = static_cast<time_t>((timeout_s - static_cast<double>(sec)) * 1e6);
    client_->set_read_timeout(sec, usec);
    client_->set_connection_timeout(sec, usec);
}

RemoteBackend::~RemoteBackend() = default;

std::string RemoteBackend::post(const std::string &route, const std::string &body) {
    auto res = client_->Post(route, body, "application/json");
    if (!res) throw BackendError("POST " + route + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200) throw BackendError("POST " + route + " returned " + std::to_string(res->status) + ": " + res->body);
    return res->body;
}

std::vector<int> RemoteBackend::decode_response(const CognitionContext &ctx, std::size_t max_len) {
    json req = context_json(vocab_, ctx);
    req["max_len"] = max_len;
    try {
        return token_ids(vocab_, json::parse(post("/decode", req.dump())).at("tokens"));
    } catch (const json::exception &e) {
        throw BackendError(std::string("malformed /decode reply: ") + e.what());
    }
}

double RemoteBackend::sequence_nll(const CognitionContext &ctx, std::span<const int> reference) {
    json req = context_json(vocab_, ctx);
    req["reference"] = token_strings(vocab_, reference);
    try {
        return json::parse(post("/nll", req.dump())).at("nll").get<double>();
    } catch (const json::exception &e) {
        throw BackendError(std::string("malformed /nll reply: ") + e.what());
    }
}

BackendServer::BackendServer(CognitionBackend &backend)
    : backend_(backend), server_(std::make_unique<httplib::Server>()) {
    auto handle = [this](const httplib::Request &req, httplib::Response &res, bool decode) {
        try {
            const json j = json::parse(req.body);
            const auto &vocab = backend_.vocab();
            const CognitionContext ctx = context_from(vocab, j);
            json reply;
            if (decode) {
                reply["tokens"] = token_strings(vocab, backend_.decode_response(ctx, j.at("max_len").get<std::size_t>()));
            } else {
                const auto ref = token_ids(vocab, j.at("reference"));
                reply["nll"] = backend_.sequence_nll(ctx, ref);
            }
            res.set_content(reply.dump(), "application/json");
        } catch (const std::exception &e) {
            res.status = 400;
            res.set_content(json{{"error", e.what()}}.dump(), "application/json");
        }
    };
    server_->Post("/decode", [handle](const httplib::Request &q, httplib::Response &r) { handle(q, r, true); });
    server_->Post("/nll", [handle](const httplib::Request &q, httplib::Response &r) { handle(q, r, false); });
}

BackendServer::~BackendServer() { stop(); }

int BackendServer::bind(const std::string &host, int port) {
    if (port == 0) {
        const int p = server_->bind_to_any_port(host);
        if (p < 0) throw BackendError("cannot bind " + host);
        return p;
    }
    if (!server_->bind_to_port(host, port)) throw BackendError("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void BackendServer::listen() { server_->listen_after_bind(); }

void BackendServer::stop() {
    if (server_->is_running()) server_->stop();
}

void BackendServer::wait_until_ready() { server_->wait_until_ready(); }

} // namespace streamgate
