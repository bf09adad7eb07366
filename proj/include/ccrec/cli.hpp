#pragma once

namespace ccrec {

// Parses and dispatches one command line. Errors are printed to stderr as
// "error: <category>: <message>" and mapped onto the documented exit codes.
int cli_run(int argc, const char* const* argv);

}  // namespace ccrec
