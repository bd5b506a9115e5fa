#include <iostream>
#include <string>
#include <vector>

#include "psychoprobe/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return psychoprobe::run_command(args, std::cout, std::cerr);
}
