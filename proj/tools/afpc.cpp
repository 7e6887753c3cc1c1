#include <iostream>

#include "afp/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return afp::dispatch(args, std::cout, std::cerr);
}
