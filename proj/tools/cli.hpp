#pragma once

#include <iosfwd>

namespace omrfit {

// Exit codes: 0 success, 2 config error, 3 data error, 4 numerics error,
// 1 anything else.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace omrfit
