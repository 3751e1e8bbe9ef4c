#pragma once
// The ecm_sphere command line, callable in-process.

#include <iosfwd>
#include <string>
#include <vector>

namespace ecm_sphere {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit codes: 0 success, 2 usage or configuration, 3 numerical failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ecm_sphere
