#pragma once

// Perception memory (append-only per-stream token store) and cognition
// pooling (selects which stored tokens the cognition backend sees).

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "streamgate/epfe.hpp"

namespace streamgate {

enum class PoolStrategy { uniform, last_k, stride };

std::string to_string(PoolStrategy s);
PoolStrategy parse_pool_strategy(const std::string &s);

struct PoolingPolicy {
    PoolStrategy strategy = PoolStrategy::uniform;
    std::size_t capacity = 16;
};

class PerceptionMemory {
  public:
    // `cap` bounds retained tokens (oldest dropped first); 0 keeps everything.
    explicit PerceptionMemory(std::size_t cap = 0) : cap_(cap) {}

    // Throws OrderingError unless frame_index exceeds the last stored index.
    void append(PerceptionToken token);
    void mark_trigger(std::uint64_t frame_index) { last_trigger_ = frame_index; }

    std::size_t size() const noexcept { return tokens_.size(); }
    bool empty() const noexcept { return tokens_.empty(); }
    std::uint64_t appended() const noexcept { return appended_; }
    const PerceptionToken &operator[](std::size_t i) const { return tokens_[i]; }
    const PerceptionToken &latest() const { return tokens_.back(); }
    std::optional<std::uint64_t> last_trigger_frame() const noexcept { return last_trigger_; }
    void clear();

  private:
    std::deque<PerceptionToken> tokens_;
    std::optional<std::uint64_t> last_trigger_;
    std::optional<std::uint64_t> last_index_;
    std::uint64_t appended_ = 0;
    std::size_t cap_;
};

// Window positions (0-based within a window of `window` tokens) chosen by a
// policy. Always contains window - 1; ascending.
std::vector<std::size_t> pool_positions(std::size_t window, const PoolingPolicy &policy);

// Up to K tokens from the window (last trigger, latest], in memory order and
// always including the latest token. When the window is empty (the latest
// frame is the trigger itself) the latest token alone is returned. Throws
// EmptyPoolError on an empty memory and ConfigError when K is 0.
std::vector<PerceptionToken> pool(const PerceptionMemory &mem, const PoolingPolicy &policy);

} // namespace streamgate
