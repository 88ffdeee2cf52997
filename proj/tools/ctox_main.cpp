#include <iostream>
#include <string>
#include <vector>

#include "ctox/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ctox::cli::run(args, std::cout, std::cerr);
}
