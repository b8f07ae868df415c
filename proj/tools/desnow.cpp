#include <iostream>

#include "desnow/cli.hpp"

int main(int argc, char** argv) {
  return desnow::cli::run(argc, argv, std::cout, std::cerr);
}
