#include <iostream>
#include <string>
#include <vector>

#include "vgkit/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return vgkit::run_cli(args, std::cout, std::cerr);
}
