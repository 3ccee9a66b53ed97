#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace limeil {

/// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 invalid config.
/// Failures print one `error:<code>:<message>` line to `err`.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int dispatch(const std::vector<std::string>& args);

}  // namespace limeil
