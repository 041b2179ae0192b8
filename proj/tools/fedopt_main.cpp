#include "fedopt/cli.hpp"

int main(int argc, char** argv) { return fedopt::cli::run_cli(argc, argv); }
