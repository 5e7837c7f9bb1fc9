#include <iostream>

#include "drgcn/experiments.hpp"

int main(int argc, char** argv) { return drgcn::run_cli(argc, argv, std::cout, std::cerr); }
