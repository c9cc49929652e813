#include "spinterp/run_manifest.hpp"

#include <chrono>
#include <ctime>

#include <json.hpp>

#include "spinterp/common.hpp"

namespace spinterp {

using json = nlohmann::json;

std::string RunManifest::config_hash() const { return hex64(fnv1a64(config)); }

void RunManifest::add_artifact(const std::string& path) {
    const std::string bytes = read_file(path);
    artifacts.push_back({path, hex64(fnv1a64(bytes)), bytes.size()});
}

std::string RunManifest::to_json() const {
    json j;
    j["format"] = "spinterp-run/1";
    j["command"] = command;
    j["config"] = json::parse(config.empty() ? "{}" : config);
    j["config_hash"] = config_hash();
    j["seed"] = seed;
    j["inputs"] = inputs;
    j["outputs"] = outputs;
    j["started"] = started;
    j["finished"] = finished;
    json a = json::array();
    for (const auto& art : artifacts) a.push_back({{"path", art.path}, {"fnv1a64", art.checksum}, {"bytes", art.bytes}});
    j["artifacts"] = std::move(a);
    return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(std::string_view text) {
    RunManifest m;
    try {
        const json j = json::parse(text);
        if (j.at("format") != "spinterp-run/1") throw ParseError("run manifest: unsupported format");
        m.command = j.at("command").get<std::string>();
        m.config = j.at("config").dump();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
        m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
        m.started = j.at("started").get<std::string>();
        m.finished = j.at("finished").get<std::string>();
        for (const auto& a : j.at("artifacts"))
            m.artifacts.push_back({a.at("path").get<std::string>(), a.at("fnv1a64").get<std::string>(), a.at("bytes").get<std::uint64_t>()});
    } catch (const json::exception& e) {
        throw ParseError(std::string("run manifest: ") + e.what());
    }
    return m;
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace spinterp
