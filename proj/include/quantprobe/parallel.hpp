#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace quantprobe {

/// Thread count from QUANTPROBE_THREADS, else hardware concurrency.
inline unsigned default_thread_count() {
    if (const char* env = std::getenv("QUANTPROBE_THREADS")) {
        try {
            const int n = std::stoi(env);
            if (n > 0) return unsigned(n);
        } catch (...) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must be
/// independent; callers merge results by index. The first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
    threads = std::max(1u, std::min<unsigned>(threads, unsigned(n)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(error_mu);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace quantprobe
