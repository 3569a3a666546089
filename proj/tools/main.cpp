#include <iostream>
#include <string>
#include <vector>

#include "dblstm/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return dblstm::cli::run(args, std::cout, std::cerr);
}
