#include <vector>

#include "confroute/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return confroute::cli::run(std::move(args));
}
