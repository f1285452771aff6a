#pragma once

#include <iosfwd>

namespace spi::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;    // bad flags, bad config, validation failures
inline constexpr int kExitRuntime = 2;  // I/O, numeric and other runtime failures

// Entry point shared by the `spi` binary and the tests.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace spi::cli
