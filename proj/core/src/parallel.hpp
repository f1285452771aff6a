#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace spi::detail {

// Runs body(begin, end) over [0, n) in chunks spread across hardware
// threads; the first exception thrown by any worker is rethrown.
template <typename F>
void parallel_chunks(std::size_t n, std::size_t chunk, F&& body) {
  if (n == 0) return;
  const std::size_t chunks = (n + chunk - 1) / chunk;
  const std::size_t workers = std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) body(c * chunk, std::min(n, (c + 1) * chunk));
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < chunks; c += workers) body(c * chunk, std::min(n, (c + 1) * chunk));
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace spi::detail
