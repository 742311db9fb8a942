#pragma once

// Run manifests: one JSON document per command invocation, carrying the fully
// resolved configuration, the seed, and the output paths. A manifest plus
// --threads 1 is enough to reproduce a run bit-identically.

#include <chrono>
#include <fstream>
#include <string>

#include <json.hpp>

#include "stereocorr/errors.hpp"

namespace stereocorr::cli {

using json = nlohmann::ordered_json;

inline std::string timestamp_utc(std::chrono::system_clock::time_point tp) {
    const std::time_t t = std::chrono::system_clock::to_time_t(tp);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline void write_manifest(const std::string& path, const json& doc) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write manifest " + path);
    f << doc.dump(2) << "\n";
}

inline json load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read manifest " + path);
    try {
        return json::parse(f);
    } catch (const std::exception& e) {
        throw FormatError("malformed manifest " + path + ": " + e.what());
    }
}

} // namespace stereocorr::cli
