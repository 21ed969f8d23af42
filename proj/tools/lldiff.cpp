#include <iostream>

#include "lldiff/cli/app.hpp"

int main(int argc, char** argv) { return lldiff::cli::run(argc, argv, std::cout, std::cerr); }
