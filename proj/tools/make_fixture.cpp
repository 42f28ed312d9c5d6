// Writes the four-Gaussian demo dataset as CSV.
#include <cstdlib>
#include <iostream>

#include "tabncd/synthetic.hpp"

int main(int argc, char** argv) {
  const std::size_t per_class = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 200;
  const double separation = argc > 2 ? std::strtod(argv[2], nullptr) : 10.0;
  const std::uint64_t seed = argc > 3 ? std::strtoull(argv[3], nullptr, 10) : 7;
  std::cout << tabncd::synthetic::four_gaussians_csv(per_class, separation, seed);
}
