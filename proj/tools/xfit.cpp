#include <iostream>

#include "xfit/cli/cli.hpp"

int main(int argc, char** argv) { return xfit::cli::run(argc, argv, std::cout, std::cerr); }
