#pragma once

/** \file cli.hpp
 *  \brief The docmmir command line: curate, train, index, search, eval, table,
 *  import and export.
 *
 * Exit codes: 0 success, 1 data or runtime error, 2 usage error. Commands that
 * write files also write "<primary output>.manifest.json" recording the
 * resolved configuration, the seed and SHA-256 digests of every input and
 * output file.
 */

#include <chrono>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace docmmir::cli {

inline constexpr const char* kVersion = "0.1.0";

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

struct Manifest {
    std::string command;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> inputs;   ///< path, sha256
    std::vector<std::pair<std::string, std::string>> outputs;  ///< path, sha256
    std::chrono::system_clock::time_point started_at = std::chrono::system_clock::now();
    std::chrono::system_clock::time_point finished_at;

    void add_input(const std::string& path);
    /// Writes the file atomically and records its digest.
    void write_output(const std::string& path, const std::string& contents);

    /// {"tool", "version", "command", "config", "config_hash", "seed",
    ///  "inputs", "outputs", "started_at", "finished_at"}
    nlohmann::ordered_json to_json() const;
};

/// Parses and runs one command. Never throws; errors are printed to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace docmmir::cli
