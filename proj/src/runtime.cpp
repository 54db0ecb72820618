#include "lmnet/runtime.hpp"

#include <omp.h>

#include <cstdlib>
#include <string>

namespace lmnet {

int apply_thread_limit() {
  if (const char* env = std::getenv("LMNET_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) omp_set_num_threads(static_cast<int>(n));
  }
  return omp_get_max_threads();
}

}  // namespace lmnet
