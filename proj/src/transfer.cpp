#include "transfir/transfer.hpp"

#include "transfir/error.hpp"

namespace transfir::transfer {

namespace ops = numerics;

TransferParams TransferParams::init(std::size_t d, std::mt19937_64& rng) {
    return {numerics::xavier_uniform(2 * d, d, rng), Tensor::zeros({d}, true)};
}

void TransferParams::collect(const std::string& prefix, numerics::ParamList& out) const {
    out.emplace_back(prefix + ".weight", weight);
    out.emplace_back(prefix + ".bias", bias);
}

DynamicPrototypes cluster_pool(Tape& tape, const Tensor& chain_reps, const std::vector<bool>& empty,
                               std::span<const data::EntityId> query_entities,
                               const codebook::AssignmentMap& assignment, std::size_t k, const Tensor& previous) {
    const std::size_t s_count = chain_reps.rows(), d = chain_reps.cols();
    if (empty.size() != s_count || query_entities.size() != s_count) {
        throw ShapeError("cluster_pool: reps, flags and query entities differ in length");
    }
    if (previous.rows() != k || previous.cols() != d) {
        throw ShapeError("cluster_pool: previous prototypes have shape " + numerics::shape_to_string(previous.shape()));
    }
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t s = 0; s < s_count; ++s) {
        if (empty[s]) continue;
        if (query_entities[s] >= assignment.size()) throw IndexError("cluster_pool: query entity without assignment");
        ++counts[assignment[query_entities[s]]];
    }
    std::vector<double> pool(k * s_count, 0.0);
    for (std::size_t s = 0; s < s_count; ++s) {
        if (empty[s]) continue;
        const std::size_t c = assignment[query_entities[s]];
        pool[c * s_count + s] = 1.0 / static_cast<double>(counts[c]);
    }
    std::vector<double> carry(k * d, 0.0);
    DynamicPrototypes out;
    out.populated.resize(k);
    const auto pv = previous.values();
    for (std::size_t c = 0; c < k; ++c) {
        out.populated[c] = counts[c] > 0;
        if (!out.populated[c]) std::copy_n(&pv[c * d], d, &carry[c * d]);
    }
    const Tensor pooled = ops::matmul(tape, Tensor::from({k, s_count}, std::move(pool)), chain_reps);
    out.values = ops::add(tape, pooled, Tensor::from({k, d}, std::move(carry)));
    return out;
}

Tensor transfer_gate(Tape& tape, const TransferParams& params, const Tensor& embeddings, const Tensor& prototypes) {
    const Tensor frozen = embeddings.requires_grad() ? embeddings.detach() : embeddings;
    return ops::sigmoid(tape, ops::linear(tape, ops::concat_cols(tape, {frozen, prototypes}), params.weight,
                                          params.bias));
}

Tensor apply_transfer(Tape& tape, const Tensor& embeddings, const Tensor& gate, const Tensor& prototypes) {
    return ops::add(tape, embeddings, ops::mul(tape, gate, prototypes));
}

Tensor transfer_all(Tape& tape, const TransferParams& params, const Tensor& embeddings, const Tensor& prototypes,
                    const codebook::AssignmentMap& assignment, TransferScope scope,
                    std::span<const data::EntityId> query_entities) {
    if (assignment.size() != embeddings.rows()) throw ShapeError("transfer_all: assignment does not cover entities");
    Tensor per_entity = ops::gather_rows(tape, prototypes, assignment);
    if (scope == TransferScope::NonQueryEntities && !query_entities.empty()) {
        std::vector<double> mask(embeddings.rows() * embeddings.cols(), 1.0);
        for (data::EntityId e : query_entities)
            std::fill_n(&mask[e * embeddings.cols()], embeddings.cols(), 0.0);
        per_entity = ops::mul(tape, per_entity, Tensor::from(embeddings.shape(), std::move(mask)));
    }
    const Tensor gate = transfer_gate(tape, params, embeddings, per_entity);
    return apply_transfer(tape, embeddings, gate, per_entity);
}

}  // namespace transfir::transfer
