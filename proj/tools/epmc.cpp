#include "epmc/cli.hpp"

int main(int argc, char** argv) {
  return epmc::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
