#include "prefsamp/cli.hpp"

#include <iostream>

int main(int argc, char **argv) { return prefsamp::run_cli(argc, argv, std::cout, std::cerr); }
