#pragma once

// Convolutional decoder over stacked (entity, relation) rows that scores
// every candidate entity by inner product.

#include <cstddef>
#include <random>
#include <string>

#include "transfir/numerics.hpp"

namespace transfir::scorer {

using numerics::Tape;
using numerics::Tensor;

struct ScorerParams {
    Tensor kernels;      // C×2×w
    Tensor proj_weight;  // (C·d)×d
    Tensor proj_bias;    // d

    static ScorerParams init(std::size_t d, std::size_t channels, std::size_t width, std::mt19937_64& rng);
    std::size_t channels() const { return kernels.shape()[0]; }
    void collect(const std::string& prefix, numerics::ParamList& out) const;
};

// Decoder output for S queries: relu(proj(relu(conv([h_q ; h_r])))), S×d.
Tensor decode(Tape& tape, const ScorerParams& params, const Tensor& query_rows, const Tensor& relation_rows);

// Raw logits S×|E| against every candidate row.
Tensor score_all(Tape& tape, const ScorerParams& params, const Tensor& query_rows, const Tensor& relation_rows,
                 const Tensor& candidates);

// Standalone probability of one logit.
double probability(double logit);

}  // namespace transfir::scorer
