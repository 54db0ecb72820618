#pragma once

namespace lmnet {

/// Caps OpenMP worker threads at $LMNET_THREADS when it holds a positive
/// integer. Returns the thread count now in effect.
int apply_thread_limit();

}  // namespace lmnet
