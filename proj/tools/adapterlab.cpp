#include <iostream>

#include "adapterlab/cli.hpp"

int main(int argc, char** argv) { return adapterlab::run_cli(argc, argv, std::cout, std::cerr); }
