#include "lidarfield/common.hpp"

#include <algorithm>
#include <thread>

namespace lidarfield {

void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t, std::size_t, int)>& fn) {
  if (n == 0) return;
  workers = std::max(1, workers);
  std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  if (w == 1) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(w);
  std::size_t chunk = (n + w - 1) / w;
  for (std::size_t k = 0; k < w; ++k) {
    std::size_t begin = k * chunk;
    std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end, k] { fn(begin, end, static_cast<int>(k)); });
  }
  for (auto& t : pool) t.join();
}

int default_thread_count() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace lidarfield
