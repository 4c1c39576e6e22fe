#include <iostream>

#include "docmmir/cli.hpp"

int main(int argc, char** argv) { return docmmir::cli::run(argc, argv, std::cout, std::cerr); }
