#include <iostream>
#include <string>
#include <vector>

#include "reframe/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return reframe::run_cli(args, std::cout, std::cerr);
}
