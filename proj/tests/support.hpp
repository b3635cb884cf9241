#pragma once

#include <unistd.h>

#include <random>
#include <vector>

#include "transfir/data.hpp"
#include "transfir/numerics.hpp"

namespace transfir::testing {

inline numerics::Tensor random_tensor(numerics::Shape shape, std::mt19937_64& rng, bool requires_grad = true,
                                      double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    std::vector<double> v(numerics::shape_size(shape));
    for (double& x : v) x = normal(rng);
    return numerics::Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Random graph over n entities and r relations with facts at timestamps
// 0..t-1 (every snapshot non-empty).
inline data::TemporalKG random_graph(std::size_t n, std::size_t r, std::size_t t, std::size_t facts_per_step,
                                     std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> ent(0, n - 1), rel(0, r - 1);
    std::vector<data::Quadruple> facts;
    for (std::size_t ts = 0; ts < t; ++ts)
        for (std::size_t i = 0; i < facts_per_step; ++i) facts.push_back({ent(rng), rel(rng), ent(rng), ts});
    return data::TemporalKG(data::Vocab::numbered(n, r), facts);
}

// 5 entities, 2 relations, 4 snapshots.
inline data::TemporalKG toy_graph() {
    const std::vector<data::Quadruple> facts = {
        {0, 0, 1, 0}, {1, 1, 2, 0}, {2, 0, 3, 1}, {0, 1, 2, 1}, {3, 0, 4, 2},
        {1, 0, 3, 2}, {0, 0, 4, 3}, {4, 1, 1, 3}, {2, 1, 0, 3},
    };
    return data::TemporalKG(data::Vocab::numbered(5, 2), facts);
}

}  // namespace transfir::testing
