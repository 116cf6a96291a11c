#include <string>
#include <vector>

#include "inat/cli.hpp"

int main(int argc, char** argv) {
  return inat::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
