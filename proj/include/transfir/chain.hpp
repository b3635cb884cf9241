#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "transfir/data.hpp"
#include "transfir/numerics.hpp"

namespace transfir::chain {

using data::EntityId;
using data::RelationId;
using data::Timestamp;

enum class Direction : std::uint8_t { QueryIsSubject, QueryIsObject };

struct ChainItem {
    EntityId subject = 0;
    RelationId relation = 0;
    EntityId object = 0;
    Timestamp timestamp = 0;
    Direction direction = Direction::QueryIsSubject;
    std::size_t gap = 0;  // t_q - timestamp, always >= 1

    EntityId counterpart() const { return direction == Direction::QueryIsSubject ? object : subject; }
    bool operator==(const ChainItem&) const = default;
};

struct Query {
    EntityId entity = 0;
    RelationId relation = 0;
    Timestamp timestamp = 0;
    bool operator==(const Query&) const = default;
};

struct InteractionChain {
    Query query;
    std::vector<ChainItem> items;  // chronological
};

// Per-entity, timestamp-sorted view of every fact an entity takes part in.
class HistoryIndex {
public:
    explicit HistoryIndex(const data::TemporalKG& g);

    // Facts in [t_q - window, t_q) containing the entity, ordered by
    // (timestamp, relation, counterpart).
    std::vector<ChainItem> collect_window(EntityId entity, Timestamp t_q, std::size_t window) const;

private:
    std::vector<std::vector<data::Quadruple>> by_entity_;
};

// Brute-force convenience over a graph; builds no index.
std::vector<ChainItem> collect_window(const data::TemporalKG& g, EntityId entity, Timestamp t_q, std::size_t window);

// Keeps the k items whose relations are most cosine-similar to the query
// relation. Ties prefer the more recent item, then the lower relation id.
// The kept items are returned in chronological order.
InteractionChain topk_by_relation_sim(std::vector<ChainItem> items, const Query& query,
                                      const numerics::Tensor& relation_embeddings, std::size_t k);

// One chain per query; every query must share the same timestamp.
std::vector<InteractionChain> build_chains_for_snapshot(const HistoryIndex& index, std::span<const Query> queries,
                                                        std::size_t window, std::size_t k,
                                                        const numerics::Tensor& relation_embeddings);

}  // namespace transfir::chain
