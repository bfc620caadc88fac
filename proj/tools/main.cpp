#include <iostream>
#include <string>
#include <vector>

#include "cap/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cap::run_cli(args, std::cout, std::cerr);
}
