#include <iostream>

#include "gdn/cli.hpp"

int main(int argc, char** argv) {
  return gdn::run_cli({argv + 1, argv + argc}, std::cout, std::cerr);
}
