#include "transfir/scorer.hpp"

#include <cmath>

#include "transfir/error.hpp"

namespace transfir::scorer {

namespace ops = numerics;

ScorerParams ScorerParams::init(std::size_t d, std::size_t channels, std::size_t width, std::mt19937_64& rng) {
    if (channels == 0) throw ConfigError("scorer needs at least one channel");
    if (width % 2 == 0) throw ConfigError("scorer kernel width must be odd");
    return {numerics::xavier_uniform(2 * width, channels, rng, {channels, 2, width}),
            numerics::xavier_uniform(channels * d, d, rng), Tensor::zeros({d}, true)};
}

void ScorerParams::collect(const std::string& prefix, numerics::ParamList& out) const {
    out.emplace_back(prefix + ".kernels", kernels);
    out.emplace_back(prefix + ".proj.weight", proj_weight);
    out.emplace_back(prefix + ".proj.bias", proj_bias);
}

Tensor decode(Tape& tape, const ScorerParams& params, const Tensor& query_rows, const Tensor& relation_rows) {
    if (query_rows.shape() != relation_rows.shape()) {
        throw ShapeError("score: query rows " + ops::shape_to_string(query_rows.shape()) + " vs relation rows " +
                         ops::shape_to_string(relation_rows.shape()));
    }
    const Tensor conv = ops::relu(tape, ops::conv_pairs(tape, query_rows, relation_rows, params.kernels));
    return ops::relu(tape, ops::linear(tape, conv, params.proj_weight, params.proj_bias));
}

Tensor score_all(Tape& tape, const ScorerParams& params, const Tensor& query_rows, const Tensor& relation_rows,
                 const Tensor& candidates) {
    if (candidates.cols() != query_rows.cols()) {
        throw ShapeError("score: candidates " + ops::shape_to_string(candidates.shape()) + " vs queries " +
                         ops::shape_to_string(query_rows.shape()));
    }
    return ops::matmul_nt(tape, decode(tape, params, query_rows, relation_rows), candidates);
}

double probability(double logit) { return 1.0 / (1.0 + std::exp(-logit)); }

}  // namespace transfir::scorer
