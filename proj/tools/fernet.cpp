#include <iostream>

#include "fernet/cli.hpp"

int main(int argc, char** argv) { return fernet::run_cli(argc, argv, std::cout, std::cerr); }
