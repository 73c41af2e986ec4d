#include "sizecast/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return sizecast::cli::run(argc, argv, std::cout, std::cerr);
}
