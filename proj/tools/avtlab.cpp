#include <iostream>

#include "avtlab/cli.hpp"

int main(int argc, char** argv) { return avtlab::cli::run(argc, argv, std::cout, std::cerr); }
