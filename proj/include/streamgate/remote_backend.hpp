#pragma once

// Cognition backend reached over HTTP, and a server exposing a local one.
//
//   POST /decode  {"prompt": [tok], "pooled": [[f64]], "prior_turns": [[tok]],
//                  "turns_kept": n, "max_len": n}          -> {"tokens": [tok]}
//   POST /nll     same context plus "reference": [tok]     -> {"nll": f64}
//
// Tokens travel as strings so either side may renumber its vocabulary.

#include <memory>
#include <string>

#include "streamgate/cognition.hpp"

namespace httplib {
class Client;
class Server;
} // namespace httplib

namespace streamgate {

class RemoteBackend : public CognitionBackend {
  public:
    // `vocab` maps between ids and the strings on the wire.
    RemoteBackend(const std::string &host, int port, const Vocab &vocab, double timeout_s = 30.0);
    ~RemoteBackend() override;

    std::vector<int> decode_response(const CognitionContext &ctx, std::size_t max_len) override;
    double sequence_nll(const CognitionContext &ctx, std::span<const int> reference) override;
    const Vocab &vocab() const override { return vocab_; }

  private:
    std::string post(const std::string &route, const std::string &body);

    std::unique_ptr<httplib::Client> client_;
    const Vocab &vocab_;
};

// Serves `backend` until stop() is called from another thread.
class BackendServer {
  public:
    explicit BackendServer(CognitionBackend &backend);
    ~BackendServer();

    // Binds to host:port (port 0 picks a free one) and returns the port.
    int bind(const std::string &host, int port);
    // Blocks serving requests.
    void listen();
    void stop();
    void wait_until_ready();

  private:
    CognitionBackend &backend_;
    std::unique_ptr<httplib::Server> server_;
};

} // namespace streamgate
