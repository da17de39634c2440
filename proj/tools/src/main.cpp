#include <iostream>

#include "mrkd_cli/commands.hpp"

int main(int argc, char** argv) { return mrkd::cli::run(argc, argv, std::cout, std::cerr); }
