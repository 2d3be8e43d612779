#include <iostream>

#include "csileak/cli.hpp"

int main(int argc, char** argv) {
  return csileak::cli::run_subcommand(argc, argv, std::cout, std::cerr);
}
