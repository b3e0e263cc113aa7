#include <iostream>

#include "symdiff_tools/cli.hpp"

int main(int argc, char** argv) { return symdiff::tools::run_cli(argc, argv, std::cout, std::cerr); }
