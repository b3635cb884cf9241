#include <gtest/gtest.h>

#include <algorithm>
#include <tuple>

#include "support.hpp"
#include "transfir/chain.hpp"
#include "transfir/error.hpp"

using namespace transfir;
using namespace transfir::chain;
using transfir::testing::random_tensor;

TEST(Window, IndexMatchesBruteForce) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const auto g = transfir::testing::random_graph(8, 3, 12, 6, rng);
        const HistoryIndex index(g);
        for (EntityId e = 0; e < 8; ++e)
            for (Timestamp t = 0; t <= 12; t += 3)
                for (std::size_t w : {1, 4, 20}) EXPECT_EQ(index.collect_window(e, t, w), collect_window(g, e, t, w));
    }
}

TEST(Window, HandExample) {
    const data::TemporalKG g(data::Vocab::numbered(4, 2),
                             {{0, 0, 1, 1}, {2, 1, 0, 3}, {0, 1, 3, 5}, {0, 0, 2, 6}});
    const HistoryIndex index(g);
    const auto items = index.collect_window(0, 6, 4);
    ASSERT_EQ(items.size(), 2u);
    EXPECT_EQ(items[0].timestamp, 3u);
    EXPECT_EQ(items[0].direction, Direction::QueryIsObject);
    EXPECT_EQ(items[0].counterpart(), 2u);
    EXPECT_EQ(items[0].gap, 3u);
    EXPECT_EQ(items[1].timestamp, 5u);
    EXPECT_EQ(items[1].gap, 1u);
}

TEST(Window, SelfLoopCountedOnce) {
    const data::TemporalKG g(data::Vocab::numbered(2, 1), {{1, 0, 1, 0}});
    EXPECT_EQ(HistoryIndex(g).collect_window(1, 1, 1).size(), 1u);
}

TEST(Window, ZeroWindowRejected) {
    const data::TemporalKG g(data::Vocab::numbered(2, 1), {{1, 0, 0, 0}});
    EXPECT_THROW(HistoryIndex(g).collect_window(1, 1, 0), ConfigError);
}

TEST(TopK, MatchesSelectionOracle) {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const auto g = transfir::testing::random_graph(6, 4, 10, 8, rng);
        auto rel = random_tensor({4, 3}, rng, false);
        // Relation 3 duplicates relation 1 so similarity ties occur.
        std::copy_n(rel.values().begin() + 3, 3, rel.mutable_values().begin() + 9);
        const HistoryIndex index(g);
        const Query q{static_cast<EntityId>(rng() % 6), static_cast<data::RelationId>(rng() % 4), 10};
        const auto items = index.collect_window(q.entity, 10, 10);
        const std::size_t k = 1 + rng() % 6;

        auto cosine = [&](data::RelationId a, data::RelationId b) {
            double dot = 0, na = 0, nb = 0;
            for (std::size_t j = 0; j < 3; ++j) {
                dot += rel.at(a, j) * rel.at(b, j);
                na += rel.at(a, j) * rel.at(a, j);
                nb += rel.at(b, j) * rel.at(b, j);
            }
            return dot / std::sqrt(na * nb);
        };
        // Greedy selection: highest similarity, then most recent, then lowest relation, then earliest position.
        std::vector<bool> used(items.size(), false);
        std::vector<std::size_t> picked;
        for (std::size_t round = 0; round < std::min(k, items.size()); ++round) {
            std::size_t best = items.size();
            for (std::size_t i = 0; i < items.size(); ++i) {
                if (used[i]) continue;
                if (best == items.size()) {
                    best = i;
                    continue;
                }
                const auto key = [&](std::size_t x) {
                    return std::make_tuple(-cosine(q.relation, items[x].relation),
                                           -static_cast<long>(items[x].timestamp), items[x].relation, x);
                };
                if (key(i) < key(best)) best = i;
            }
            used[best] = true;
            picked.push_back(best);
        }
        std::sort(picked.begin(), picked.end());
        std::vector<ChainItem> expect;
        for (auto i : picked) expect.push_back(items[i]);
        EXPECT_EQ(topk_by_relation_sim(items, q, rel, k).items, expect);
    }
}

TEST(TopK, ShortHistoryKeptWhole) {
    const auto rel = numerics::Tensor::matrix({{1, 0}, {0, 1}});
    std::vector<ChainItem> items{{0, 1, 2, 3, Direction::QueryIsSubject, 1}};
    EXPECT_EQ(topk_by_relation_sim(items, {0, 0, 4}, rel, 5).items.size(), 1u);
    EXPECT_THROW(topk_by_relation_sim(items, {0, 0, 4}, rel, 0), ConfigError);
}

TEST(Snapshot, ChainsStrictlyPrecedeQueries) {
    std::mt19937_64 rng(13);
    const auto g = transfir::testing::random_graph(10, 3, 15, 10, rng);
    const HistoryIndex index(g);
    const auto rel = random_tensor({3, 4}, rng, false);
    std::vector<Query> qs;
    for (const auto& f : g.facts_at(9)) qs.push_back({f.subject, f.relation, 9});
    for (const auto& c : build_chains_for_snapshot(index, qs, 5, 4, rel)) {
        EXPECT_LE(c.items.size(), 4u);
        for (const auto& it : c.items) {
            EXPECT_LT(it.timestamp, 9u);
            EXPECT_GE(it.timestamp, 4u);
        }
    }
    qs.push_back({0, 0, 8});
    EXPECT_THROW(build_chains_for_snapshot(index, qs, 5, 4, rel), ContractError);
}
