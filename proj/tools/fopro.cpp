#include <iostream>

#include "fopro/commands.hpp"

int main(int argc, char** argv) { return fopro::cli::run(argc, argv, std::cout, std::cerr); }
