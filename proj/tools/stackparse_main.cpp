#include <iostream>

#include "stackparse/harness.hpp"

int main(int argc, char** argv) { return stackparse::cliMain(argc, argv, std::cout, std::cerr); }
