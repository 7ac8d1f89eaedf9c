#include <iostream>

#include "sgmcmc/cli.hpp"

int main(int argc, char** argv) { return sgmcmc::cli::main(argc, argv, std::cout, std::cerr); }
