#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace gdn {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitData = 3,
  kExitDivergence = 4,
};

// Runs `gdn <args...>` in-process. Normal output goes to `out`, progress,
// warnings and the single-line `gdn: error: <kind>: ...` diagnostic to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out,
            std::ostream& err);

}  // namespace gdn
