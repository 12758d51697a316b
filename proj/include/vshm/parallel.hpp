#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace vshm {

//! Run fn(i) for i in [0, n) on up to `jobs` worker threads (0 = hardware
//! concurrency). Per-index exceptions are captured and returned as messages;
//! aggregation order is by index, independent of scheduling.
template <typename Fn>
std::vector<std::string> parallel_for_indexed(std::size_t n, int jobs, Fn&& fn) {
    std::vector<std::string> errors(n);
    if (n == 0) return errors;
    unsigned workers = jobs > 0 ? static_cast<unsigned>(jobs) : std::thread::hardware_concurrency();
    if (workers == 0) workers = 1;
    workers = std::min<unsigned>(workers, static_cast<unsigned>(n));

    std::atomic<std::size_t> next{0};
    auto body = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            } catch (...) {
                errors[i] = "unknown error";
            }
        }
    };

    if (workers == 1) {
        body();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) pool.emplace_back(body);
        for (auto& t : pool) t.join();
    }
    return errors;
}

} // namespace vshm
