#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ufdn/gradsuite.hpp"

namespace ufdn {

enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitIo = 3,
  kExitDivergence = 4,
  kExitVerification = 5,
};

struct CliEnv {
  /// Cases for `gradcheck`; the default registry when unset.
  std::function<std::vector<GradCheckCase>(std::uint64_t seed)> gradcheck_cases;
};

/// Runs one command. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const CliEnv& env = {});

}  // namespace ufdn
