#include "transfir/chain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "transfir/error.hpp"

namespace transfir::chain {

namespace {

ChainItem make_item(const data::Quadruple& q, EntityId entity, Timestamp t_q) {
    return ChainItem{q.subject, q.relation, q.object, q.timestamp,
                     q.subject == entity ? Direction::QueryIsSubject : Direction::QueryIsObject, t_q - q.timestamp};
}

bool chronological_less(const ChainItem& a, const ChainItem& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    if (a.relation != b.relation) return a.relation < b.relation;
    return a.counterpart() < b.counterpart();
}

Timestamp window_start(Timestamp t_q, std::size_t window) { return t_q >= window ? t_q - window : 0; }

}  // namespace

HistoryIndex::HistoryIndex(const data::TemporalKG& g) : by_entity_(g.num_entities()) {
    for (Timestamp t = 0; t < g.num_timestamps(); ++t) {
        for (const auto& q : g.facts_at(t)) {
            by_entity_[q.subject].push_back(q);
            if (q.object != q.subject) by_entity_[q.object].push_back(q);
        }
    }
}

std::vector<ChainItem> HistoryIndex::collect_window(EntityId entity, Timestamp t_q, std::size_t window) const {
    if (window == 0) throw ConfigError("window size must be at least 1");
    if (entity >= by_entity_.size()) throw IndexError("entity " + std::to_string(entity) + " outside vocabulary");
    const auto& facts = by_entity_[entity];
    const Timestamp lo = window_start(t_q, window);
    auto first = std::lower_bound(facts.begin(), facts.end(), lo,
                                  [](const data::Quadruple& q, Timestamp t) { return q.timestamp < t; });
    std::vector<ChainItem> out;
    for (auto it = first; it != facts.end() && it->timestamp < t_q; ++it) out.push_back(make_item(*it, entity, t_q));
    std::stable_sort(out.begin(), out.end(), chronological_less);
    return out;
}

std::vector<ChainItem> collect_window(const data::TemporalKG& g, EntityId entity, Timestamp t_q, std::size_t window) {
    if (window == 0) throw ConfigError("window size must be at least 1");
    std::vector<ChainItem> out;
    for (Timestamp t = window_start(t_q, window); t < t_q; ++t)
        for (const auto& q : g.facts_at(t))
            if (q.subject == entity || q.object == entity) out.push_back(make_item(q, entity, t_q));
    std::stable_sort(out.begin(), out.end(), chronological_less);
    return out;
}

InteractionChain topk_by_relation_sim(std::vector<ChainItem> items, const Query& query,
                                      const numerics::Tensor& relation_embeddings, std::size_t k) {
    if (k == 0) throw ConfigError("chain length k must be positive");
    InteractionChain chain{query, {}};
    if (items.size() <= k) {
        std::stable_sort(items.begin(), items.end(), chronological_less);
        chain.items = std::move(items);
        return chain;
    }
    const std::size_t d = relation_embeddings.cols();
    const auto rv = relation_embeddings.values();
    auto row = [&](RelationId r) {
        if (r >= relation_embeddings.rows()) throw IndexError("relation " + std::to_string(r) + " has no embedding");
        return rv.subspan(r * d, d);
    };
    auto norm = [](std::span<const double> v) {
        return std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    };
    const auto q_row = row(query.relation);
    const double q_norm = norm(q_row);
    std::vector<double> sim(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto r_row = row(items[i].relation);
        const double denom = q_norm * norm(r_row);
        sim[i] = denom > 0.0 ? std::inner_product(q_row.begin(), q_row.end(), r_row.begin(), 0.0) / denom : 0.0;
    }
    std::vector<std::size_t> order(items.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (sim[a] != sim[b]) return sim[a] > sim[b];
        if (items[a].timestamp != items[b].timestamp) return items[a].timestamp > items[b].timestamp;
        return items[a].relation < items[b].relation;
    });
    order.resize(k);
    std::sort(order.begin(), order.end());
    chain.items.reserve(k);
    for (std::size_t i : order) chain.items.push_back(items[i]);
    std::stable_sort(chain.items.begin(), chain.items.end(), chronological_less);
    return chain;
}

std::vector<InteractionChain> build_chains_for_snapshot(const HistoryIndex& index, std::span<const Query> queries,
                                                        std::size_t window, std::size_t k,
                                                        const numerics::Tensor& relation_embeddings) {
    std::vector<InteractionChain> out;
    out.reserve(queries.size());
    for (const auto& q : queries) {
        if (q.timestamp != queries.front().timestamp) {
            throw ContractError("queries of one snapshot must share a timestamp");
        }
        out.push_back(topk_by_relation_sim(index.collect_window(q.entity, q.timestamp, window), q,
                                           relation_embeddings, k));
    }
    return out;
}

}  // namespace transfir::chain
