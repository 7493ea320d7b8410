#include <iostream>

#include "ipscope/cli.hpp"

int main(int argc, char** argv) { return ipscope::cli::run(argc, argv, std::cout, std::cerr); }
