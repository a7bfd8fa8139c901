#pragma once

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "cftwin/config.hpp"

namespace cftwin::commands {

enum ExitCode : int { kOk = 0, kConfigError = 2, kFormatError = 3, kRuntimeError = 4 };

// Maps an exception to its exit class: configuration, data format or runtime.
int exit_code_for(const std::exception& e);

inline const std::vector<std::string>& names() {
    static const std::vector<std::string> n{"gen", "train", "sample", "prune", "distill", "eval", "plot"};
    return n;
}

struct Invocation {
    std::string command;
    config::Sources sources;
    std::filesystem::path out = "run";
};

// Runs one command and returns its manifest (also written to
// <out>/manifest_<command>.json). Throws on failure.
nlohmann::json run(const Invocation& inv);

// run() with errors reported to `err` and translated to exit codes.
int run_guarded(const Invocation& inv, std::ostream& err);

// Environment variable naming the dataset cache directory.
inline constexpr const char* kCacheEnv = "CF_TWIN_CACHE";

std::uint32_t file_crc32(const std::filesystem::path& path);

}  // namespace cftwin::commands
