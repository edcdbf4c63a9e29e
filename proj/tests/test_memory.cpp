#include <gtest/gtest.h>

#include <algorithm>

#include "streamgate/memory.hpp"
#include "support.hpp"

using namespace streamgate;

namespace {

PerceptionToken tok(std::uint64_t frame) { return {frame, {static_cast<double>(frame), 1.0}}; }

PerceptionMemory filled(std::uint64_t first, std::uint64_t last) {
    PerceptionMemory m;
    for (auto f = first; f <= last; ++f) m.append(tok(f));
    return m;
}

std::vector<std::uint64_t> frames_of(const std::vector<PerceptionToken> &ts) {
    std::vector<std::uint64_t> out;
    for (const auto &t : ts) out.push_back(t.frame_index);
    return out;
}

} // namespace

TEST(Memory, AppendAndOrdering) {
    PerceptionMemory m;
    m.append(tok(7));
    EXPECT_EQ(m.size(), 1u);
    EXPECT_THROW(m.append(tok(5)), OrderingError);
    EXPECT_THROW(m.append(tok(7)), OrderingError);
    EXPECT_EQ(m.size(), 1u);
}

TEST(Memory, BulkAppendsStayMonotone) {
    PerceptionMemory m;
    for (std::uint64_t f = 0; f < 10000; ++f) m.append(tok(f * 3 + 1));
    ASSERT_EQ(m.size(), 10000u);
    for (std::size_t i = 1; i < m.size(); ++i) ASSERT_LT(m[i - 1].frame_index, m[i].frame_index);
}

TEST(Memory, RingCapDropsOldest) {
    PerceptionMemory m(4);
    for (std::uint64_t f = 0; f < 10; ++f) m.append(tok(f));
    EXPECT_EQ(m.size(), 4u);
    EXPECT_EQ(m.appended(), 10u);
    EXPECT_EQ(m[0].frame_index, 6u);
    EXPECT_THROW(m.append(tok(3)), OrderingError);
}

TEST(Pool, SmallWindowReturnsEverything) {
    const auto m = filled(0, 2);
    for (auto s : {PoolStrategy::uniform, PoolStrategy::last_k, PoolStrategy::stride})
        EXPECT_EQ(frames_of(pool(m, {s, 16})), (std::vector<std::uint64_t>{0, 1, 2})) << to_string(s);
}

TEST(Pool, UniformOverHundred) {
    auto m = filled(1000, 1099);
    // Window positions 1-based {25, 50, 75, 100}.
    EXPECT_EQ(frames_of(pool(m, {PoolStrategy::uniform, 4})), (std::vector<std::uint64_t>{1024, 1049, 1074, 1099}));
}

TEST(Pool, LastKOne) {
    const auto m = filled(0, 30);
    EXPECT_EQ(frames_of(pool(m, {PoolStrategy::last_k, 1})), (std::vector<std::uint64_t>{30}));
    EXPECT_EQ(frames_of(pool(m, {PoolStrategy::last_k, 3})), (std::vector<std::uint64_t>{28, 29, 30}));
}

TEST(Pool, StrideEveryCeilWindowOverK) {
    const auto m = filled(0, 9);
    // Window 10, K 3: step ceil(10/3) = 4 back from the latest.
    EXPECT_EQ(frames_of(pool(m, {PoolStrategy::stride, 3})), (std::vector<std::uint64_t>{1, 5, 9}));
}

TEST(Pool, WindowStartsAfterTrigger) {
    auto m = filled(0, 20);
    m.mark_trigger(14);
    EXPECT_EQ(frames_of(pool(m, {PoolStrategy::uniform, 16})), (std::vector<std::uint64_t>{15, 16, 17, 18, 19, 20}));
    m.mark_trigger(20);
    EXPECT_EQ(frames_of(pool(m, {PoolStrategy::uniform, 16})), (std::vector<std::uint64_t>{20}));
}

TEST(Pool, Errors) {
    PerceptionMemory m;
    EXPECT_THROW(pool(m, {}), EmptyPoolError);
    m.append(tok(0));
    EXPECT_THROW(pool(m, {PoolStrategy::uniform, 0}), ConfigError);
    EXPECT_THROW(parse_pool_strategy("random"), ConfigError);
}

// Brute-force check of the output contract over many windows and capacities.
TEST(Pool, PropertiesHoldForAllPolicies) {
    for (std::size_t w = 1; w <= 60; ++w) {
        const auto m = filled(100, 100 + w - 1);
        for (std::size_t k = 1; k <= 20; ++k)
            for (auto s : {PoolStrategy::uniform, PoolStrategy::last_k, PoolStrategy::stride}) {
                const auto out = frames_of(pool(m, {s, k}));
                ASSERT_LE(out.size(), k);
                const std::size_t step = (w + k - 1) / k;
                const std::size_t expected = s == PoolStrategy::stride && w > k ? (w + step - 1) / step : std::min(w, k);
                ASSERT_EQ(out.size(), expected) << to_string(s) << " w=" << w << " k=" << k;
                ASSERT_TRUE(std::is_sorted(out.begin(), out.end()));
                ASSERT_EQ(std::adjacent_find(out.begin(), out.end()), out.end());
                ASSERT_EQ(out.back(), 100 + w - 1);
                ASSERT_GE(out.front(), 100u);
                ASSERT_EQ(out, frames_of(pool(m, {s, k})));
            }
    }
}

TEST(Pool, UniformSpacingIsEven) {
    // Gaps (including the leading one from before the window) are all
    // floor(W/K) or ceil(W/K) and the picks end at the latest token.
    for (std::size_t w = 1; w <= 80; ++w)
        for (std::size_t k = 1; k <= w; ++k) {
            const auto pos = pool_positions(w, {PoolStrategy::uniform, k});
            ASSERT_EQ(pos.size(), k);
            ASSERT_EQ(pos.back(), w - 1);
            const std::size_t lo = w / k, hi = (w + k - 1) / k;
            std::size_t prev = 0;
            for (std::size_t i = 0; i < k; ++i) {
                const std::size_t gap = pos[i] + 1 - prev;
                ASSERT_TRUE(gap == lo || gap == hi) << "w=" << w << " k=" << k << " i=" << i;
                prev = pos[i] + 1;
            }
        }
}
