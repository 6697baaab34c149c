#include <iostream>

#include "ufdn/cli.hpp"

int main(int argc, char** argv) {
  return ufdn::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
