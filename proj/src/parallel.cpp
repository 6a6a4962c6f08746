#include "sphereflow/parallel.hpp"

#include <cstdlib>
#include <string>

#include "sphereflow/error.hpp"

namespace sphereflow {

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SPHEREFLOW_THREADS"); env && *env) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::InvalidArgument, std::string("SPHEREFLOW_THREADS must be a positive integer, got '") + env + "'");
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace sphereflow
