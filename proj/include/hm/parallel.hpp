#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hm {

// Chunked parallel loop over [0, total). With jobs <= 1 runs inline.
// Work items must be independent; output slots are index-addressed so
// results do not depend on the number of jobs.
template <typename Func>
void parallel_for(std::size_t total, int jobs, Func&& func) {
    if (jobs <= 1 || total <= 1) {
        for (std::size_t i = 0; i < total; ++i) func(i);
        return;
    }
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), total);
    std::vector<std::thread> threads;
    threads.reserve(n_threads);
    std::exception_ptr first_error;
    std::mutex error_mutex;
    const std::size_t chunk = (total + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(total, begin + chunk);
        if (begin >= end) break;
        threads.emplace_back([&, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) func(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : threads) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

} // namespace hm
