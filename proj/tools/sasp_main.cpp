#include <iostream>

#include "sasp/cli.hpp"

int main(int argc, char** argv) {
  return sasp::cli::run(argc, argv, {std::cout, std::cerr});
}
