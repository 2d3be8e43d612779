#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace csileak::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitStageError = 1;
inline constexpr int kExitUsage = 2;

/// Runs one subcommand. `args` excludes the program name.
/// Subcommands: simulate, scan, reconstruct, demux, fuse, restore, metrics, pipeline.
int run_subcommand(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run_subcommand(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// 64-bit FNV-1a, used for config hashes.
std::uint64_t fnv1a(const std::string& bytes);

}  // namespace csileak::cli
