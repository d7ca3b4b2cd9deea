#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <type_traits>
#include <vector>

namespace gaussnet {

/// Evaluates fn(0), ..., fn(n-1) on up to `threads` workers and returns the results by index,
/// so the outcome never depends on scheduling. threads <= 1 runs inline.
/// If several tasks throw, the exception of the lowest index is rethrown.
template <class Fn>
auto parallel_map(std::size_t n, int threads, Fn&& fn) -> std::vector<std::invoke_result_t<Fn&, std::size_t>> {
  using R = std::invoke_result_t<Fn&, std::size_t>;
  std::vector<R> out(n);
  if (threads <= 1 || n <= 1) {
    for (std::size_t j = 0; j < n; ++j) out[j] = fn(j);
    return out;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < n;) {
      try {
        out[j] = fn(j);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(count - 1);
  for (std::size_t w = 1; w < count; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace gaussnet
