#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace tpred::cli {

inline constexpr const char* kVersion = "0.1.0";

/// Runs one subcommand. `args` excludes the program name. Returns 0 on success, 2 on usage
/// errors and 1 when the command itself fails.
int dispatch(const std::vector<std::string>& args);

/// Hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

/// Manifest path written next to a primary output.
std::filesystem::path manifest_path(const std::filesystem::path& output);

}  // namespace tpred::cli
