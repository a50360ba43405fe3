#include "tdmapos/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return tdmapos::run_cli(argc, argv, std::cout, std::cerr); }
