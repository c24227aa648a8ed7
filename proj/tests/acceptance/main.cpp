#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "acceptance/criteria.hpp"

// Usage: avio_acceptance [--only N]...
int main(int argc, char** argv) {
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--only" && i + 1 < argc) {
      only.push_back(std::atoi(argv[++i]));
    } else {
      std::cerr << "usage: " << argv[0] << " [--only N]...\n";
      return 2;
    }
  }
  const auto results = avio::acceptance::run_all(only, std::cout);
  return avio::acceptance::all_passed(results) ? 0 : 1;
}
