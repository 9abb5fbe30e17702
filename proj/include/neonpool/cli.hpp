#pragma once

#include <cstdint>
#include <iosfwd>
#include <string_view>
#include <vector>

namespace neonpool {

// Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or config error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// "500k", "1m", "2MB", "4096" -> bytes (decimal multipliers). Throws std::invalid_argument.
std::uint64_t parse_size(std::string_view token);

}  // namespace neonpool
