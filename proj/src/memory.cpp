#include "streamgate/memory.hpp"

#include <algorithm>

#include "streamgate/error.hpp"

namespace streamgate {

std::string to_string(PoolStrategy s) {
    switch (s) {
    case PoolStrategy::uniform: return "uniform";
    case PoolStrategy::last_k: return "last_k";
    case PoolStrategy::stride: return "stride";
    }
    return "?";
}

PoolStrategy parse_pool_strategy(const std::string &s) {
    if (s == "uniform") return PoolStrategy::uniform;
    if (s == "last_k") return PoolStrategy::last_k;
    if (s == "stride") return PoolStrategy::stride;
    throw ConfigError("unknown pooling strategy '" + s + "'");
}

void PerceptionMemory::append(PerceptionToken token) {
    if (last_index_ && token.frame_index <= *last_index_)
        throw OrderingError("frame " + std::to_string(token.frame_index) + " appended after frame " +
                            std::to_string(*last_index_));
    last_index_ = token.frame_index;
    tokens_.push_back(std::move(token));
    ++appended_;
    if (cap_ != 0 && tokens_.size() > cap_) tokens_.pop_front();
}

void PerceptionMemory::clear() {
    tokens_.clear();
    last_trigger_.reset();
    last_index_.reset();
    appended_ = 0;
}

std::vector<std::size_t> pool_positions(std::size_t window, const PoolingPolicy &policy) {
    const std::size_t k = policy.capacity;
    if (k == 0) throw ConfigError("pooling capacity must be at least 1");
    std::vector<std::size_t> pos;
    if (window == 0) return pos;
    if (window <= k) {
        for (std::size_t i = 0; i < window; ++i) pos.push_back(i);
        return pos;
    }
    switch (policy.strategy) {
    case PoolStrategy::uniform:
        // i * window / K for i = 1..K, as 1-based positions.
        for (std::size_t i = 1; i <= k; ++i) pos.push_back(i * window / k - 1);
        break;
    case PoolStrategy::last_k:
        for (std::size_t i = window - k; i < window; ++i) pos.push_back(i);
        break;
    case PoolStrategy::stride: {
        const std::size_t step = (window + k - 1) / k;
        for (std::size_t back = 0; back < window; back += step) pos.push_back(window - 1 - back);
        std::reverse(pos.begin(), pos.end());
        break;
    }
    }
    return pos;
}

std::vector<PerceptionToken> pool(const PerceptionMemory &mem, const PoolingPolicy &policy) {
    if (policy.capacity == 0) throw ConfigError("pooling capacity must be at least 1");
    if (mem.empty()) throw EmptyPoolError("cannot pool from an empty perception memory");
    const std::size_t n = mem.size();
    std::size_t first = 0;
    if (auto trig = mem.last_trigger_frame()) {
        // Memory indices are ascending, so binary search the window start.
        std::size_t lo = 0, hi = n;
        while (lo < hi) {
            const std::size_t mid = (lo + hi) / 2;
            if (mem[mid].frame_index <= *trig) lo = mid + 1;
            else hi = mid;
        }
        first = lo;
    }
    if (first == n) return {mem.latest()};
    std::vector<PerceptionToken> out;
    for (std::size_t p : pool_positions(n - first, policy)) out.push_back(mem[first + p]);
    return out;
}

} // namespace streamgate
