#include "anosov/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return anosov::cli::run(argc, argv, std::cout, std::cerr); }
