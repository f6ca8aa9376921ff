#include <iostream>

#include "bdd/cli.hpp"

int main(int argc, char **argv) { return bdd::run_cli(argc, argv, std::cout, std::cerr); }
