#pragma once

#include <memory>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "spinterp/corpus.hpp"
#include "spinterp/model.hpp"

namespace spinterp {

struct HttpRequest {
    std::string method;  // GET, POST
    std::string path;
    std::string body;
};

struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;
};

struct ServiceOptions {
    int max_steps = 64;
};

/// Audio ids encode the preset's grid indices, so audio URLs stay valid
/// without server-side state.
std::string audio_id(const SynthDescriptor& descriptor, const Preset& preset);
Preset preset_from_audio_id(const SynthDescriptor& descriptor, std::string_view id);

/// HTTP API over an immutable model and corpus:
///   GET  /api/health
///   GET  /api/presets            test-split presets
///   GET  /api/preset/{id}
///   POST /api/interpolate        {"a", "b", "method": latent|reference|both, "T"}
///   GET  /api/audio/{id}.wav
/// Errors: {"error": {"code", "message"}} with status 400 or 404.
class Service {
public:
    Service(SpinVae model, Corpus corpus, ServiceOptions opts = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Thread-safe; never mutates the model or corpus.
    HttpResponse handle(const HttpRequest& req) const;

    /// Binds and serves on a background thread. Port 0 picks a free port.
    /// Returns the bound port; throws IoError when binding fails.
    int start(const std::string& host, int port);
    /// Blocks until stop() is called from another thread or a signal handler.
    void wait();
    void stop();

private:
    HttpResponse health() const;
    HttpResponse presets() const;
    HttpResponse preset(std::string_view id) const;
    HttpResponse interpolate(std::string_view body) const;
    HttpResponse audio(std::string_view id) const;

    SpinVae model_;
    Corpus corpus_;
    ServiceOptions opts_;
    struct Server;
    std::unique_ptr<Server> server_;
};

}  // namespace spinterp
