#pragma once

#include <iosfwd>

namespace sizecast::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitUsage = 2;

// Entry point for the `sizecast` binary. Data goes to `out`, diagnostics to
// `err`; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sizecast::cli
