#pragma once

#include <iosfwd>

#include "lgcpcv/config.hpp"

namespace lgcpcv {

enum ExitCode : int { kExitOk = 0, kExitPartial = 1, kExitUsage = 2 };

int cmd_simulate(const RunConfig& config, std::ostream& log);
int cmd_fit(const RunConfig& config, std::ostream& log);
int cmd_crossval(const RunConfig& config, std::ostream& log);
int cmd_rank(const RunConfig& config, std::ostream& log);

}  // namespace lgcpcv
