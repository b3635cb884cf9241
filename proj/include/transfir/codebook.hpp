#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "transfir/numerics.hpp"

namespace transfir::codebook {

// K trainable prototype vectors over frozen entity embeddings.
struct Codebook {
    numerics::Tensor codewords;  // K×d, requires_grad
    double alpha = 1.0;          // weight of the codebook term
    double beta = 0.25;          // weight of the commitment term

    std::size_t size() const { return codewords.rows(); }
    std::size_t dim() const { return codewords.cols(); }
};

// π: entity id -> cluster index.
using AssignmentMap = std::vector<std::size_t>;

// Nearest codeword by squared Euclidean distance, lowest index on ties.
AssignmentMap assign(const Codebook& cb, const numerics::Tensor& embeddings);

// Σ_e ||sg[h_e] - c_π(e)||²; gradient reaches the codewords only.
numerics::Tensor codebook_loss(numerics::Tape& tape, const Codebook& cb, const numerics::Tensor& embeddings,
                               const AssignmentMap& assignment);

// Σ_e ||h_e - sg[c_π(e)]||². With frozen embeddings this term has a value but
// no trainable recipient.
numerics::Tensor commitment_loss(numerics::Tape& tape, const Codebook& cb, const numerics::Tensor& embeddings,
                                 const AssignmentMap& assignment);

// α·codebook_loss + β·commitment_loss
numerics::Tensor codebook_objective(numerics::Tape& tape, const Codebook& cb, const numerics::Tensor& embeddings,
                                    const AssignmentMap& assignment);

// Farthest-point seeding over entity embeddings: the first codeword is a
// uniformly drawn entity, each following one maximizes the distance to the
// nearest codeword chosen so far.
Codebook init_codebook(const numerics::Tensor& embeddings, std::size_t k, std::uint64_t seed, double alpha = 1.0,
                       double beta = 0.25);

// Codewords with no assigned entity.
std::size_t dead_codes(const AssignmentMap& assignment, std::size_t k);

// Fraction of entities whose cluster's majority label matches their own.
double assignment_purity(const AssignmentMap& assignment, std::span<const std::size_t> labels);

}  // namespace transfir::codebook
