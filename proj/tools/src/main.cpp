#include <iostream>

#include "spi_cli/cli.hpp"

int main(int argc, char** argv) { return spi::cli::run(argc, argv, std::cout, std::cerr); }
