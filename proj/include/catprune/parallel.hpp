#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace catprune {

namespace detail {
inline int& thread_cap_storage() {
    static int cap = [] {
        if (const char* env = std::getenv("CAT_PRUNE_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return std::min(v, 64);
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return static_cast<int>(std::clamp(hw, 1u, 4u));
    }();
    return cap;
}
}  // namespace detail

// Worker cap for row-parallel loops, taken from CAT_PRUNE_THREADS when set.
inline int thread_cap() { return detail::thread_cap_storage(); }

inline void set_thread_cap(int cap) {
    detail::thread_cap_storage() = std::max(1, cap);
}

// Static contiguous partition of [begin, end). Each index writes only its own
// outputs, so results are identical for every worker count.
template <class F>
void parallel_for(int begin, int end, F&& f) {
    const int count = end - begin;
    if (count <= 0) return;
    const int workers = std::min(thread_cap(), count);
    if (workers <= 1) {
        for (int i = begin; i < end; ++i) f(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (int t = 0; t < workers; ++t) {
        const int lo = begin + static_cast<int>(static_cast<long long>(count) * t / workers);
        const int hi = begin + static_cast<int>(static_cast<long long>(count) * (t + 1) / workers);
        if (t == workers - 1) {
            for (int i = lo; i < hi; ++i) f(i);
        } else {
            pool.emplace_back([lo, hi, &f] {
                for (int i = lo; i < hi; ++i) f(i);
            });
        }
    }
    for (auto& th : pool) th.join();
}

}  // namespace catprune
