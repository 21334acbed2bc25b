#include "popevo/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return popevo::run_cli(argc, argv, std::cout, std::cerr); }
