#pragma once

// `qopf` command-line front end. Exit codes: 0 success, 1 usage, 2 data or
// I/O error, 3 numerical failure.

#include <ostream>
#include <string>
#include <vector>

namespace qopf {

inline constexpr const char* kToolVersion = "0.1.0";

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace qopf
