#pragma once

// Deterministic parallel-for: each index writes only its own output slots,
// so results are identical for any thread count.

#include <cstddef>
#include <thread>
#include <vector>

namespace sarlab {

template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, int threads, Fn&& fn) {
  if (end <= begin) return;
  const std::size_t n = end - begin;
  if (threads <= 1 || n < 2) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = begin + w; i < end; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace sarlab
