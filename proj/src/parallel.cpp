#include "attngeo/parallel.hpp"

#include <cstdlib>
#include <string>

namespace attngeo {

unsigned default_threads() {
  if (const char* env = std::getenv("ATTNGEO_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return static_cast<unsigned>(n);
    } catch (const std::exception&) {
    }
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

}  // namespace attngeo
