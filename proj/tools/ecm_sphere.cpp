#include <iostream>
#include <string>
#include <vector>

#include "ecm_sphere/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ecm_sphere::run_cli(args, std::cout, std::cerr);
}
