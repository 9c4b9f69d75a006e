#include <iostream>
#include <string>
#include <vector>

#include "adverseg/cli.hpp"

int main(int argc, char** argv) {
  return adverseg::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
