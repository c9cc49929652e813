#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace spinterp {

struct Artifact {
    std::string path;
    std::string checksum;  // fnv1a64, hex
    std::uint64_t bytes = 0;
};

/// Record written next to every CLI output. Everything except the timestamps
/// is a function of the command, its configuration and its inputs.
struct RunManifest {
    std::string command;
    std::string config;  // canonical JSON of the effective configuration
    std::uint64_t seed = 0;
    std::map<std::string, std::string> inputs;
    std::map<std::string, std::string> outputs;
    std::string started;
    std::string finished;
    std::vector<Artifact> artifacts;

    std::string config_hash() const;
    /// Reads the file and records its checksum under its path.
    void add_artifact(const std::string& path);
    std::string to_json() const;
    static RunManifest from_json(std::string_view text);
};

/// UTC, ISO 8601 with seconds.
std::string utc_timestamp();

}  // namespace spinterp
