#include "ovb/cli.hpp"

int main(int argc, char** argv) { return ovb::cli::run_cli(argc, argv); }
