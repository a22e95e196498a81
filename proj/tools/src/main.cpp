#include <iostream>

#include "protofuse_cli/cli.hpp"

int main(int argc, char** argv) { return protofuse::cli::run_cli(argc, argv, std::cout, std::cerr); }
