#include <string>
#include <vector>

#include "safnet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return safnet::cli::run(args);
}
