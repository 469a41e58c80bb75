/**
 * @file cli.hpp
 * @brief The `avtlab` command line, callable in-process for tests.
 */
#pragma once

#include <iosfwd>

namespace avtlab::cli {

/// Exit codes: 0 success, 1 config or input error, 2 internal error.
/// Errors go to `err` as `ERR:<code>:<detail>`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace avtlab::cli
