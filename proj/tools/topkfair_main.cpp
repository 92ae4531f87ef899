#include <iostream>

#include "topkfair/cli.hpp"

int main(int argc, char** argv) { return topkfair::run_cli(argc, argv, std::cout, std::cerr); }
