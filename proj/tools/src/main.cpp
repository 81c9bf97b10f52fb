#include <iostream>

#include "streamasr/cli.hpp"

int main(int argc, char** argv) { return streamasr::run_cli(argc, argv, std::cout, std::cerr); }
