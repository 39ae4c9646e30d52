#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace forgrad {

/// Runs one `forgrad <subcommand>` invocation. Returns 0 on success, 1 on a
/// usage error (nothing written), 2 on a data or format error.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, const char* const* argv);

}  // namespace forgrad
