// Acceptance suite: one pass/fail line per criterion.
#include "tsnet/tsnet.hpp"

#include <iostream>

int main() {
  std::cout << "acceptance suite placeholder" << std::endl;
  return 0;
}
