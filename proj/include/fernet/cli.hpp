#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fernet {

/// Entry point of the `fernet` command. Subcommands: prepare, register,
/// train, eval, opcount, gradcheck. Returns the process exit code; normal
/// output goes to `out`, warnings and errors to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Convenience overload; args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fernet
