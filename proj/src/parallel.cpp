#include "fernet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace fernet {

namespace {
std::atomic<int> g_threads{1};
}

void set_parallelism(int threads) { g_threads.store(std::max(1, threads)); }

int parallelism() { return g_threads.load(); }

int parallelism_from_env(int fallback) {
  const char* env = std::getenv("FERNET_THREADS");
  if (env == nullptr || *env == '\0') return fallback;
  try {
    std::size_t used = 0;
    const int value = std::stoi(env, &used);
    if (used != std::string(env).size() || value < 1) return fallback;
    return value;
  } catch (const std::exception&) {
    return fallback;
  }
}

void parallel_for(std::size_t count, std::size_t min_chunk,
                  const std::function<void(std::size_t, std::size_t)>& fn) {
  if (count == 0) return;
  const std::size_t workers = std::min<std::size_t>(
      static_cast<std::size_t>(parallelism()),
      std::max<std::size_t>(1, count / std::max<std::size_t>(1, min_chunk)));
  if (workers <= 1) {
    fn(0, count);
    return;
  }
  const std::size_t chunk = (count + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(0, std::min(count, chunk));
}

}  // namespace fernet
