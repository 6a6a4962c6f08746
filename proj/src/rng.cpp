#include "sphereflow/rng.hpp"

#include <sstream>

#include "sphereflow/error.hpp"

namespace sphereflow {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_ << ' ' << normal_;
  return out.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream in(state);
  in >> engine_ >> normal_;
  if (!in) fail(ErrorKind::BadFormat, "unreadable RNG state");
}

}  // namespace sphereflow
