#pragma once

// Synthetic temporal graphs with planted, type-level temporal patterns.
//
// Each type τ owns relations 2τ ("out") and 2τ+1 ("in") and a few anchor
// entities. At timestamp t the type's phase is p = (t + offset_τ) mod A,
// where A is the anchor count. An active member m emits
//   (m, out_τ, anchor[p], t)  and  (anchor[(p+A-1) mod A], in_τ, m, t),
// so the correct answer depends on the type and the current phase, which
// only the recent behaviour of other members reveals.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "transfir/data.hpp"
#include "transfir/numerics.hpp"

namespace transfir::synth {

struct SynthSpec {
    std::size_t types = 4;
    std::size_t entities_per_type = 30;  // anchors included
    std::size_t anchors_per_type = 3;
    std::size_t timestamps = 60;
    double emergence_fraction = 0.25;       // of all entities, first seen in test
    double valid_emergence_fraction = 0.10; // first seen in validation
    double noise = 0.05;                    // random facts per pattern fact
    double activity = 0.25;                 // per-step probability a member acts
    std::size_t answers_per_pattern = 1;    // 1 or 2 equally likely anchors
    std::size_t dim = 32;
    double jitter = 0.25;  // embedding noise around the type centroid
    std::uint64_t seed = 0;
    double train_ratio = 0.5, valid_ratio = 0.2, test_ratio = 0.3;

    std::size_t num_entities() const { return types * entities_per_type; }
    std::size_t num_relations() const { return 2 * types; }
    void validate() const;
};

struct GroundTruth {
    std::vector<std::size_t> type_of;              // per entity
    std::vector<bool> is_anchor;                   // per entity
    std::vector<std::vector<data::EntityId>> anchors;  // per type
    std::vector<std::size_t> phase_offset;         // per type
    std::size_t answers_per_pattern = 1;

    std::size_t phase(std::size_t type, data::Timestamp t) const;
    // Anchors the pattern can produce for (entity, relation, t) in the
    // augmented relation space; empty when the query follows no pattern.
    std::vector<data::EntityId> pattern_answers(data::EntityId entity, data::RelationId relation, data::Timestamp t,
                                                std::size_t num_relations) const;
};

struct SynthInstance {
    SynthSpec spec;
    data::TemporalKG graph;
    numerics::Tensor embeddings;  // |E|×d
    GroundTruth truth;
    data::Split split;
};

SynthInstance generate(const SynthSpec& spec);

// Writes entity2id.txt, relation2id.txt, facts.txt, embeddings.txt and
// truth.txt (`entity type anchor` rows plus phase lines).
void write_instance(const SynthInstance& instance, const std::filesystem::path& dir);
GroundTruth read_truth(const std::filesystem::path& path);

// Expected MRR of the predictor that ranks the pattern's anchors first (in
// random order) and everything else after, over emerging queries of the
// test range, averaged over both directions like the evaluator.
double oracle_best_mrr(const GroundTruth& truth, const data::TemporalKG& g, const data::Split& split);

}  // namespace transfir::synth
