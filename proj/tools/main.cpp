#include "neonpool/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return neonpool::run_cli(argc, argv, std::cout, std::cerr); }
