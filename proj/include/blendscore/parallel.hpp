#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace blendscore {

// Chunked parallel loop over [0, n). Work items must write disjoint state;
// chunks are claimed dynamically, so use this only where the result does not
// depend on execution order (all callers here write per-index slots).
template <typename F>
void parallel_for(std::size_t n, F&& fn, unsigned n_threads = 0) {
    if (n == 0) return;
    unsigned hw = std::thread::hardware_concurrency();
    if (n_threads == 0) n_threads = hw ? hw : 1;
    if (n_threads > n) n_threads = static_cast<unsigned>(n);
    if (n_threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }

    const std::size_t chunk = std::max<std::size_t>(1, n / (8 * n_threads));
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;

    auto worker = [&] {
        for (;;) {
            const std::size_t begin = next.fetch_add(chunk);
            if (begin >= n) return;
            const std::size_t end = std::min(begin + chunk, n);
            try {
                for (std::size_t i = begin; i < end; ++i) fn(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    for (unsigned t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace blendscore
