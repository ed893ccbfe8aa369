#include <iostream>

#include "winstat/cli.hpp"

int main(int argc, char** argv) { return winstat::cli::run(argc, argv, std::cout, std::cerr); }
