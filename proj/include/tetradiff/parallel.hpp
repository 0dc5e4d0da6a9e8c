#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace tetradiff
{
    /// Worker count used by parallel loops; 1 gives the deterministic single-threaded mode.
    inline std::size_t & thread_count()
    {
        static std::size_t n = std::max(1u, std::thread::hardware_concurrency());
        return n;
    }

    inline void set_thread_count(std::size_t n) { thread_count() = std::max<std::size_t>(1, n); }

    /**
     * Calls fn(i) for i in [0, n) on up to thread_count() threads. Each index
     * is processed exactly once; callers write only to slot i, so results do
     * not depend on scheduling. The first exception thrown is rethrown.
     */
    template <class Fn>
    void parallel_for(std::size_t n, Fn && fn)
    {
        const std::size_t workers = std::min(thread_count(), n);
        if (workers <= 1)
        {
            for (std::size_t i = 0; i < n; ++i) fn(i);
            return;
        }
        std::atomic<std::size_t> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;
        auto work = [&] {
            for (std::size_t i; (i = next.fetch_add(1)) < n;)
            {
                try
                {
                    fn(i);
                }
                catch (...)
                {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    next = n;
                }
            }
        };
        std::vector<std::thread> pool;
        pool.reserve(workers - 1);
        for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
        work();
        for (auto & t : pool) t.join();
        if (error) std::rethrow_exception(error);
    }
} // namespace tetradiff
