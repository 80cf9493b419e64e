#include <iostream>

#include "asyncfmm/cli.hpp"

int main(int argc, char** argv) {
  return asyncfmm::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
