#pragma once

namespace dronecam::cli {

// Parses argv and runs one subcommand. Returns 0 on success, 1 on a usage or
// validation error, 2 on a runtime failure.
int run(int argc, char** argv);

}  // namespace dronecam::cli
