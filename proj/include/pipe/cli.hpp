#pragma once

namespace riskpipe {

// Exit codes: 0 success, 1 failed thresholds, 2 configuration or input
// errors, 3 other runtime failures.
int run_cli(int argc, char** argv);

}  // namespace riskpipe
