#include <iostream>
#include <string>
#include <vector>

#include "binloc/cli.hpp"

int main(int argc, char** argv) {
  return binloc::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
