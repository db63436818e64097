#include <iostream>

#include "nsd/cli.hpp"

int main(int argc, char** argv) {
  const auto parsed = nsd::cli::parse_args(argc, argv, std::cout, std::cerr);
  if (!parsed.config) return parsed.status;
  return nsd::cli::run(*parsed.config, std::cout, std::cerr);
}
