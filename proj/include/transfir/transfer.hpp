#pragma once

// Cluster pooling of chain representations into dynamic prototypes and the
// gated transfer of those prototypes onto entity embeddings.

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "transfir/codebook.hpp"
#include "transfir/data.hpp"
#include "transfir/numerics.hpp"

namespace transfir::transfer {

using numerics::Tape;
using numerics::Tensor;

struct DynamicPrototypes {
    Tensor values;               // K×d
    std::vector<bool> populated;  // cluster pooled at least one non-empty chain
};

struct TransferParams {
    Tensor weight;  // 2d×d
    Tensor bias;    // d

    static TransferParams init(std::size_t d, std::mt19937_64& rng);
    void collect(const std::string& prefix, numerics::ParamList& out) const;
};

enum class TransferScope {
    AllEntities,      // every entity receives its cluster's prototype
    NonQueryEntities  // query entities of the snapshot keep their frozen embedding
};

// Mean of non-empty chain representations per cluster of the query entity.
// Clusters without contributions take their row of `previous` (a constant).
DynamicPrototypes cluster_pool(Tape& tape, const Tensor& chain_reps, const std::vector<bool>& empty,
                               std::span<const data::EntityId> query_entities,
                               const codebook::AssignmentMap& assignment, std::size_t k, const Tensor& previous);

// ω = sigmoid(Ψ([h ‖ c])) row-wise.
Tensor transfer_gate(Tape& tape, const TransferParams& params, const Tensor& embeddings, const Tensor& prototypes);

// h + ω ⊙ c row-wise.
Tensor apply_transfer(Tape& tape, const Tensor& embeddings, const Tensor& gate, const Tensor& prototypes);

// Transferred embeddings for every entity given the snapshot's prototypes.
Tensor transfer_all(Tape& tape, const TransferParams& params, const Tensor& embeddings, const Tensor& prototypes,
                    const codebook::AssignmentMap& assignment, TransferScope scope = TransferScope::AllEntities,
                    std::span<const data::EntityId> query_entities = {});

}  // namespace transfir::transfer
