#include "ccrec/cli.hpp"

int main(int argc, char** argv) { return ccrec::cli_run(argc, argv); }
