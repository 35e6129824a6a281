// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <thread>

namespace skyrank {

// threads <= 0 means "use the hardware". Serial-deterministic mode passes 1.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace skyrank
