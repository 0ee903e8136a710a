#pragma once

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

namespace mbrec::cli {

// Orchestrates one sub-command run and records it: resolved configuration,
// input file hashes, and the hashes of everything the run wrote. The manifest
// is deterministic (no timestamps), so identical inputs produce an identical
// manifest byte for byte.
struct RunManifest {
    std::string command;
    std::uint64_t seed = 1;
    std::size_t threads = 1;
    nlohmann::json config = nlohmann::json::object();
    std::map<std::string, std::string> inputs;     // path as given -> FNV-1a hex
    std::map<std::string, std::string> artifacts;  // path relative to out dir -> FNV-1a hex

    nlohmann::json to_json() const;
    void write(const std::filesystem::path& out_dir) const;
};

// Parses argv and executes the selected sub-command. Returns the process exit
// code: 0 on success, 1 when an evaluation --check threshold fails, 2 on usage
// errors, missing files, or invalid configuration.
int run(int argc, const char* const* argv);

}  // namespace mbrec::cli
