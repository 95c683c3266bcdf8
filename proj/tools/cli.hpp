#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace eranet::cli {

/// Process exit statuses; stable across releases.
enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kWeights = 3 };

/// Runs one command. args[0] is the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

/// Splices "key = value" lines from a config file into args right after the
/// subcommand so that flags given on the command line take precedence.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

}  // namespace eranet::cli
