#include "octofold/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace octofold {

namespace {

int default_threads() {
    if (const char* env = std::getenv("OCTOFOLD_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::clamp(hw, 1u, 8u));
}

std::atomic<int> g_threads{0};  // 0 = not initialized yet

}  // namespace

int worker_threads() {
    int n = g_threads.load(std::memory_order_relaxed);
    if (n == 0) {
        n = default_threads();
        g_threads.store(n, std::memory_order_relaxed);
    }
    return n;
}

void set_worker_threads(int n) {
    g_threads.store(n < 1 ? 1 : n, std::memory_order_relaxed);
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
    if (n <= 0) return;
    int workers = worker_threads();
    if (workers <= 1 || n < 2) {
        body(0, n);
        return;
    }
    std::int64_t chunks = std::min<std::int64_t>(workers, n);
    std::int64_t per = (n + chunks - 1) / chunks;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(chunks - 1));
    for (std::int64_t c = 1; c < chunks; ++c) {
        std::int64_t b = c * per;
        std::int64_t e = std::min(n, b + per);
        if (b >= e) break;
        pool.emplace_back([&body, b, e] { body(b, e); });
    }
    body(0, std::min(n, per));
    for (auto& t : pool) t.join();
}

}  // namespace octofold
