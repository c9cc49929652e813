#include "spinterp/service.hpp"

#include <charconv>
#include <chrono>
#include <cstring>

#include <httplib.h>
#include <json.hpp>

#include "spinterp/interp_engine.hpp"
#include "spinterp/timbre_eval.hpp"

namespace spinterp {

using json = nlohmann::json;

namespace {

constexpr char kHexDigits[] = "0123456789abcdef";

HttpResponse json_response(int status, const json& body) { return {status, "application/json", body.dump(), {}}; }

HttpResponse error(int status, const std::string& code, const std::string& message) {
    return json_response(status, {{"error", {{"code", code}, {"message", message}}}});
}

struct RequestError {
    int status;
    std::string code;
    std::string message;
};

std::uint64_t parse_id(std::string_view s) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty())
        throw RequestError{400, "bad_id", "preset id '" + std::string(s) + "' is not a non-negative integer"};
    return v;
}

json features_json(const FeatureVector& f) {
    json j = json::object();
    for (int k = 0; k < kNumFeatures; ++k) j[feature_names()[k]] = f.values[k];
    return j;
}

json named_params(const SynthDescriptor& d, const Preset& p) {
    json j = json::object();
    for (int i = 0; i < d.size(); ++i) {
        if (d.params[i].categorical()) j[d.params[i].name] = static_cast<int>(p.values[i]);
        else j[d.params[i].name] = p.values[i];
    }
    return j;
}

}  // namespace

std::string audio_id(const SynthDescriptor& descriptor, const Preset& preset) {
    std::string id = "p";
    for (int b : preset_bins(descriptor, preset)) {
        id += kHexDigits[(b >> 4) & 15];
        id += kHexDigits[b & 15];
    }
    return id;
}

Preset preset_from_audio_id(const SynthDescriptor& descriptor, std::string_view id) {
    const std::size_t expect = 1 + 2 * static_cast<std::size_t>(descriptor.size());
    if (id.size() != expect || id[0] != 'p') throw ValidationError("malformed audio id");
    Preset p;
    for (int i = 0; i < descriptor.size(); ++i) {
        int b = 0;
        for (int k = 0; k < 2; ++k) {
            const char c = id[1 + 2 * i + k];
            const char* pos = std::strchr(kHexDigits, c);
            if (!pos || c == '\0') throw ValidationError("malformed audio id");
            b = b * 16 + static_cast<int>(pos - kHexDigits);
        }
        const auto& spec = descriptor.params[i];
        if (b >= spec.cardinality()) throw ValidationError("audio id value out of range for " + spec.name);
        p.values.push_back(spec.categorical() ? b : spec.grid.value(b));
    }
    return p;
}

struct Service::Server {
    httplib::Server http;
    std::thread thread;
};

Service::Service(SpinVae model, Corpus corpus, ServiceOptions opts)
    : model_(std::move(model)), corpus_(std::move(corpus)), opts_(opts) {
    if (model_.descriptor().hash() != corpus_.descriptor.hash())
        throw DescriptorMismatch("model descriptor hash " + hex64(model_.descriptor().hash()) + " != corpus descriptor hash " +
                                 hex64(corpus_.descriptor.hash()));
}

Service::~Service() { stop(); }

HttpResponse Service::handle(const HttpRequest& req) const {
    try {
        const std::string_view path = req.path;
        auto under = [&](std::string_view prefix) { return path.substr(0, prefix.size()) == prefix; };
        if (req.method == "GET" && path == "/api/health") return health();
        if (req.method == "GET" && path == "/api/presets") return presets();
        if (req.method == "GET" && under("/api/preset/")) return preset(path.substr(12));
        if (req.method == "POST" && path == "/api/interpolate") return interpolate(req.body);
        if (req.method == "GET" && under("/api/audio/") && path.size() > 15 && path.substr(path.size() - 4) == ".wav")
            return audio(path.substr(11, path.size() - 15));
        if (path == "/api/interpolate" || path == "/api/health" || path == "/api/presets")
            return error(405, "method_not_allowed", req.method + " is not supported on " + req.path);
        return error(404, "not_found", "no route for " + req.method + " " + req.path);
    } catch (const RequestError& e) {
        return error(e.status, e.code, e.message);
    } catch (const ValidationError& e) {
        return error(400, "invalid", e.what());
    } catch (const std::exception& e) {
        return error(500, "internal", e.what());
    }
}

HttpResponse Service::health() const {
    return json_response(200, {{"status", "ok"},
                               {"api", "spinterp/1"},
                               {"descriptor_hash", hex64(corpus_.descriptor.hash())},
                               {"mode", to_string(model_.config().mode)},
                               {"numerical_head", to_string(model_.config().numerical_head)},
                               {"latent_dim", model_.config().latent_dim},
                               {"presets", corpus_.indices(Split::Test).size()}});
}

HttpResponse Service::presets() const {
    const auto& d = corpus_.descriptor;
    const int alg = *d.find("algorithm");
    json list = json::array();
    for (int i : corpus_.indices(Split::Test)) {
        const auto& rec = corpus_.items[i].record;
        list.push_back({{"id", rec.id}, {"name", "preset-" + std::to_string(rec.id)}, {"algorithm", static_cast<int>(rec.preset.values[alg])}});
    }
    return json_response(200, {{"count", list.size()}, {"presets", std::move(list)}});
}

HttpResponse Service::preset(std::string_view id_text) const {
    const std::uint64_t id = parse_id(id_text);
    const int idx = corpus_.find(id);
    if (idx < 0) throw RequestError{404, "unknown_preset", "no preset with id " + std::to_string(id)};
    const auto& item = corpus_.items[idx];
    const auto& d = corpus_.descriptor;
    return json_response(200, {{"id", id},
                               {"name", "preset-" + std::to_string(id)},
                               {"split", to_string(item.split)},
                               {"values", item.record.preset.values},
                               {"params", named_params(d, item.record.preset)},
                               {"audio_url", "/api/audio/" + audio_id(d, item.record.preset) + ".wav"}});
}

HttpResponse Service::interpolate(std::string_view body) const {
    json req;
    try {
        req = json::parse(body);
    } catch (const json::exception&) {
        throw RequestError{400, "malformed_json", "request body is not valid JSON"};
    }
    if (!req.is_object()) throw RequestError{400, "malformed_request", "request body must be a JSON object"};
    auto get_id = [&](const char* key) -> int {
        if (!req.contains(key)) throw RequestError{400, "missing_field", std::string("missing field '") + key + "'"};
        const auto& v = req[key];
        if (!v.is_number_unsigned()) throw RequestError{400, "bad_id", std::string("field '") + key + "' must be a preset id"};
        const int idx = corpus_.find(v.get<std::uint64_t>());
        if (idx < 0) throw RequestError{404, "unknown_preset", "no preset with id " + std::to_string(v.get<std::uint64_t>())};
        return idx;
    };
    const int ia = get_id("a"), ib = get_id("b");
    std::string method = "latent";
    if (req.contains("method")) {
        if (!req["method"].is_string()) throw RequestError{400, "bad_method", "field 'method' must be a string"};
        method = req["method"].get<std::string>();
    }
    if (method != "latent" && method != "reference" && method != "both")
        throw RequestError{400, "bad_method", "method must be latent, reference or both"};
    int T = 9;
    if (req.contains("T")) {
        if (!req["T"].is_number_integer()) throw RequestError{400, "bad_T", "field 'T' must be an integer"};
        T = req["T"].get<int>();
    }
    if (T < 3 || T > opts_.max_steps)
        throw RequestError{400, "bad_T", "T must be in [3, " + std::to_string(opts_.max_steps) + "]"};

    const auto& d = corpus_.descriptor;
    const auto& A = corpus_.items[ia];
    const auto& B = corpus_.items[ib];
    std::vector<InterpSequence> seqs;
    if (method != "reference")
        seqs.push_back(interpolate_latent(model_, corpus_.render, {&A.record.preset, &A.spectrogram},
                                          {&B.record.preset, &B.spectrogram}, T));
    if (method != "latent") seqs.push_back(interpolate_reference(d, A.record.preset, B.record.preset, T));

    json out_seqs = json::array();
    for (const auto& seq : seqs) {
        const auto rendered = render_sequence(d, seq, corpus_.render);
        std::vector<FeatureVector> feats;
        json steps = json::array();
        for (int t = 0; t < T; ++t) {
            feats.push_back(extract_features(rendered.audio[t]));
            const auto& p = seq.steps[t].preset;
            json s{{"t", t + 1},
                   {"values", p.values},
                   {"params", named_params(d, p)},
                   {"audio_url", "/api/audio/" + audio_id(d, p) + ".wav"},
                   {"features", features_json(feats.back())}};
            if (seq.steps[t].z) s["z"] = *seq.steps[t].z;
            steps.push_back(std::move(s));
        }
        const auto m = sequence_metrics(feats);
        json sm = json::object(), nl = json::object();
        for (int k = 0; k < kNumFeatures; ++k) {
            sm[feature_names()[k]] = m.smoothness[k];
            nl[feature_names()[k]] = m.nonlinearity[k];
        }
        out_seqs.push_back({{"method", to_string(seq.method)}, {"steps", std::move(steps)}, {"smoothness", sm}, {"nonlinearity", nl}});
    }
    return json_response(200, {{"a", A.record.id}, {"b", B.record.id}, {"T", T}, {"method", method}, {"sequences", std::move(out_seqs)}});
}

HttpResponse Service::audio(std::string_view id) const {
    Preset p;
    try {
        p = preset_from_audio_id(corpus_.descriptor, id);
    } catch (const ValidationError& e) {
        throw RequestError{404, "unknown_audio", e.what()};
    }
    HttpResponse r;
    r.content_type = "audio/wav";
    r.body = encode_wav(render(corpus_.descriptor, p, corpus_.render));
    r.headers = {{"Cache-Control", "public, max-age=31536000, immutable"}, {"ETag", "\"" + std::string(id) + "\""}};
    return r;
}

int Service::start(const std::string& host, int port) {
    if (server_) throw Error("service already started");
    auto srv = std::make_unique<Server>();
    auto bridge = [this](const httplib::Request& req, httplib::Response& res) {
        const HttpResponse r = handle({req.method, req.path, req.body});
        res.status = r.status;
        for (const auto& [k, v] : r.headers) res.set_header(k, v);
        res.set_content(r.body, r.content_type);
    };
    srv->http.Get("/.*", bridge);
    srv->http.Post("/.*", bridge);
    srv->http.Put("/.*", bridge);
    srv->http.Delete("/.*", bridge);
    int bound = port;
    if (port == 0) {
        bound = srv->http.bind_to_any_port(host);
        if (bound < 0) throw IoError("cannot bind " + host);
    } else if (!srv->http.bind_to_port(host, port)) {
        throw IoError("cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
    }
    srv->thread = std::thread([s = srv.get()] { s->http.listen_after_bind(); });
    srv->http.wait_until_ready();
    server_ = std::move(srv);
    return bound;
}

void Service::wait() {
    while (server_ && server_->http.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
}

void Service::stop() {
    if (!server_) return;
    server_->http.stop();
    if (server_->thread.joinable()) server_->thread.join();
    server_.reset();
}

}  // namespace spinterp
