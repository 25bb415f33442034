#include <iostream>

#include "rpl/cli.hpp"

int main(int argc, char** argv) { return rpl::run_cli(argc, argv, std::cout, std::cerr); }
