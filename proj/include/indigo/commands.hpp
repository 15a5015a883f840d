#pragma once

namespace indigo {

// CLI entry point; exit code 0 on success, 1 config error, 2 numerical error,
// 3 I/O error.
int run_command(int argc, const char* const* argv);

}  // namespace indigo
