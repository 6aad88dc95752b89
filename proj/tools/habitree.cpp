#include <iostream>

#include "habitree/cli.hpp"

int main(int argc, char** argv) { return habitree::run_cli(argc, argv, std::cout, std::cerr); }
